//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod support;

#[path = "../../core/tests/oracles/edges.rs"]
mod edges;
#[path = "../../core/tests/oracles/masks.rs"]
mod masks;
#[path = "../../core/tests/oracles/pipeline.rs"]
mod pipeline;
#[path = "../../core/tests/oracles/plans.rs"]
mod plans;
#[path = "../../core/tests/oracles/template.rs"]
mod template;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

type Check = (&'static str, fn());

const CRITERIA: &[Check] = &[
    ("mask algebra matches brute force (3x3 exhaustive, 32x32 random)", || {
        masks::exhaustive_three_by_three();
        masks::random_thirty_two_square();
        masks::mismatched_sizes_are_rejected();
    }),
    ("attention plan entries follow the region and relation pattern", plans::relation_pattern_over_random_pairs),
    ("applying a plan is local, additive and order-free", plans::apply_plan_is_local_and_additive),
    ("canny rings a square and agrees with the reference detector", || {
        edges::filled_square_ring();
        edges::agrees_with_reference();
    }),
    ("candidate jobs and lexicon sampling use the fixed constants", || {
        pipeline::candidate_jobs_follow_constants();
        pipeline::lexicon_draws_ten();
    }),
    ("candidate ranking equals brute-force ordering", || {
        pipeline::rank_scores_match_brute_force();
        pipeline::batches_rank_like_brute_force();
    }),
    ("headless CLI runs are bit-identical across three runs", || {
        support::cli_determinism_check();
    }),
    ("inference prompt keeps every instruction; golden space round-trips", || {
        template::rendered_prompt_keeps_every_sentence();
        template::golden_fixture_round_trips();
    }),
    ("sessions survive a kill; client errors leave the manifest unchanged", || {
        support::kill_restart_check();
        support::four_xx_check();
    }),
];

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panicked".into()
    }
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in CRITERIA {
        let start = Instant::now();
        match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("PASS {name} ({:.2}s)", start.elapsed().as_secs_f64()),
            Err(payload) => {
                failed += 1;
                let msg = panic_message(payload.as_ref()).replace('\n', " ");
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
