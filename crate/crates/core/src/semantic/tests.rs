use proptest::prelude::*;

use super::*;

fn regions(ids: &[&str]) -> BTreeSet<RegionId> {
    ids.iter().map(|s| RegionId::new(*s)).collect()
}

fn girl_cat_space() -> SemanticSpace {
    SemanticSpace {
        singles: vec![
            SingleObjectPrompt::new("girl", "girl")
                .with_attributes(&["long hair"])
                .with_state(&["standing"]),
            SingleObjectPrompt::new("cat", "cat")
                .with_attributes(&["fluffy"])
                .with_state(&["sleeping"]),
            SingleObjectPrompt::new(RegionId::background(), "park").with_attributes(&["sunny"]),
        ],
        crosses: vec![CrossObjectPrompt {
            subject_id: "girl".into(),
            object_id: "cat".into(),
            direction: "facing to the cat".into(),
            relationship: "girl touching cat".into(),
        }],
        overall: OverallPrompt::default(),
    }
}

#[test]
fn flatten_worked_examples() {
    let none = OverallPrompt::default();
    let girl = SingleObjectPrompt::new("r", "girl").with_attributes(&["long hair"]);
    assert_eq!(flatten_region(&girl, &none).unwrap(), "girl, long hair");

    assert_eq!(flatten_region(&SingleObjectPrompt::new("r", "cat"), &none).unwrap(), "cat");

    let man = SingleObjectPrompt::new("r", "man")
        .with_attributes(&["tall"])
        .with_state(&["standing"]);
    let anime = OverallPrompt {
        style: Some("anime".into()),
        ..Default::default()
    };
    assert_eq!(flatten_region(&man, &anime).unwrap(), "man, tall, standing, anime");
}

#[test]
fn flatten_skips_empty_segments_and_labels() {
    let s = SingleObjectPrompt {
        region_id: "r".into(),
        object_type: "dog".into(),
        attributes: vec!["".into(), " brown ".into(), ",".into()],
        state: vec!["running".into()],
    };
    let overall = OverallPrompt {
        lighting: Some("soft light".into()),
        camera: Some("  ".into()),
        style: None,
    };
    let out = flatten_region(&s, &overall).unwrap();
    assert_eq!(out, "dog, brown, running, soft light");
    assert!(!out.contains(",,") && !out.contains("type:") && !out.contains("attribute:"));
}

#[test]
fn flatten_requires_type_except_background() {
    let none = OverallPrompt::default();
    let err = flatten_region(&SingleObjectPrompt::new("r", " "), &none).unwrap_err();
    assert!(matches!(err, Error::Validation(v) if v[0].field == "type"));
    let bg = SingleObjectPrompt::new(RegionId::background(), "").with_attributes(&["blue sky"]);
    assert_eq!(flatten_region(&bg, &none).unwrap(), "blue sky");
}

fn two_region_space(subject: &str, relation: &str, object: &str) -> (SemanticSpace, CrossObjectPrompt) {
    let space = SemanticSpace {
        singles: vec![
            SingleObjectPrompt::new("a", subject),
            SingleObjectPrompt::new("b", object),
            SingleObjectPrompt::new(RegionId::background(), "street"),
        ],
        crosses: vec![],
        overall: OverallPrompt::default(),
    };
    let c = CrossObjectPrompt {
        subject_id: "a".into(),
        object_id: "b".into(),
        direction: String::new(),
        relationship: relation.into(),
    };
    (space, c)
}

#[test]
fn relationship_prompt_templates() {
    let (space, c) = two_region_space("girl", "holding", "umbrella");
    assert_eq!(relationship_prompt(&c, &space).unwrap(), "girl holding umbrella");

    let (space, c) = two_region_space("man", "sitting on", "bench");
    assert_eq!(relationship_prompt(&c, &space).unwrap(), "man sitting on bench");

    let (space, c) = two_region_space("girl", "girl touching cat", "cat");
    assert_eq!(relationship_prompt(&c, &space).unwrap(), "girl touching cat");

    let (space, mut c) = two_region_space("man", "man next to", "car");
    c.direction = "facing to the car".into();
    assert_eq!(
        relationship_prompt(&c, &space).unwrap(),
        "man next to car, facing to the car"
    );
}

#[test]
fn relationship_prompt_dangling_reference() {
    let (space, mut c) = two_region_space("girl", "holding", "umbrella");
    c.object_id = "gone".into();
    assert!(matches!(relationship_prompt(&c, &space), Err(Error::Validation(_))));
}

#[test]
fn validate_complete_space() {
    assert!(validate(&girl_cat_space(), &regions(&["girl", "cat"])).is_empty());
}

#[test]
fn validate_names_region_missing_type() {
    let mut space = girl_cat_space();
    space.singles[1].object_type.clear();
    let v = validate(&space, &regions(&["girl", "cat"]));
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].region, Some(RegionId::new("cat")));
    assert_eq!(v[0].field, "type");
    assert_eq!(v[0].kind, ViolationKind::MissingField);
}

#[test]
fn validate_flags_dangling_cross_reference() {
    let mut space = girl_cat_space();
    space.singles.remove(1);
    let v = validate(&space, &regions(&["girl"]));
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].kind, ViolationKind::DanglingReference);
    assert_eq!(v[0].region, Some(RegionId::new("cat")));
}

#[test]
fn validate_structural_faults() {
    let mut space = girl_cat_space();
    space.singles[2].state = vec!["raining".into()];
    space.singles.push(SingleObjectPrompt::new(RegionId::background(), "sea"));
    space.singles.push(SingleObjectPrompt::new("ghost", "ghost"));
    space.crosses.push(CrossObjectPrompt {
        subject_id: "girl".into(),
        object_id: "girl".into(),
        direction: String::new(),
        relationship: String::new(),
    });
    let kinds: BTreeSet<_> = validate(&space, &regions(&["girl", "cat", "dog"]))
        .into_iter()
        .map(|v| format!("{:?}", v.kind))
        .collect();
    for k in [
        "BackgroundState",
        "DuplicateBackground",
        "UnknownRegion",
        "MissingRegion",
        "SelfRelation",
        "MissingField",
    ] {
        assert!(kinds.contains(k), "missing {k} in {kinds:?}");
    }
}

#[test]
fn hedge_words_detected_as_whole_words() {
    let mut space = girl_cat_space();
    space.singles[0].attributes = vec!["red or blue".into(), "ornate".into()];
    space.overall.style = Some("possibly anime".into());
    let v = hedge_violations(&space);
    assert_eq!(v.len(), 2);
    assert_eq!(v[0].field, "attribute");
    assert_eq!(v[1].field, "style");
    assert!(hedge_violations(&girl_cat_space()).is_empty());
}

#[test]
fn completeness_flags_missing_state() {
    let mut space = girl_cat_space();
    space.singles[1].state.clear();
    let v = completeness_violations(&space);
    assert_eq!(v.len(), 1);
    assert_eq!((v[0].region.clone().unwrap().as_str(), v[0].field.as_str()), ("cat", "state"));
}

#[test]
fn merge_keeps_user_text() {
    let mut user = SemanticSpace::skeleton([(&RegionId::new("girl"), Some("young girl")), (&RegionId::new("cat"), None)]);
    user.overall.style = Some("anime".into());
    let merged = merge_user_fields(&user, &girl_cat_space());
    assert_eq!(merged.single(&"girl".into()).unwrap().object_type, "young girl");
    assert_eq!(merged.single(&"girl".into()).unwrap().attributes, vec!["long hair"]);
    assert_eq!(merged.single(&"cat".into()).unwrap().object_type, "cat");
    assert_eq!(merged.background().unwrap().object_type, "park");
    assert_eq!(merged.crosses.len(), 1);
    assert_eq!(merged.overall.style.as_deref(), Some("anime"));
}

#[test]
fn document_uses_schema_field_names() {
    let json = girl_cat_space().to_json();
    for key in SPACE_KEYS.iter().chain(FIELD_NAMES.iter()) {
        assert!(json.contains(&format!("\"{key}\"")), "{key} missing from {json}");
    }
    assert!(!json.contains("\"object_type\""));
}

#[test]
fn document_accepts_array_phrases() {
    let text = r#"{"single_object": {"a": {"type": "dog", "attribute": ["brown", "small, fluffy"], "state": "running"},
                   "background": {"type": "grass", "attribute": ""}}}"#;
    let space = SemanticSpace::from_json(text).unwrap();
    assert_eq!(space.singles[0].attributes, vec!["brown", "small", "fluffy"]);
    assert_eq!(space.singles[0].state, vec!["running"]);
    assert!(space.crosses.is_empty());
}

fn phrase() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,8}){0,2}"
}

fn opt_phrase() -> impl Strategy<Value = Option<String>> {
    prop::option::of(phrase())
}

fn arb_space() -> impl Strategy<Value = SemanticSpace> {
    let single = (phrase(), prop::collection::vec(phrase(), 0..3), prop::collection::vec(phrase(), 0..3));
    (
        prop::collection::vec(single, 1..5),
        (phrase(), prop::collection::vec(phrase(), 0..3)),
        prop::collection::vec((0usize..5, 0usize..5, phrase(), phrase()), 0..4),
        (opt_phrase(), opt_phrase(), opt_phrase()),
    )
        .prop_map(|(objs, (bg_type, bg_attrs), rels, (lighting, camera, style))| {
            let mut singles: Vec<SingleObjectPrompt> = objs
                .into_iter()
                .enumerate()
                .map(|(i, (t, a, s))| SingleObjectPrompt {
                    region_id: RegionId::new(format!("r{i}")),
                    object_type: t,
                    attributes: a,
                    state: s,
                })
                .collect();
            let n = singles.len();
            let crosses = rels
                .into_iter()
                .map(|(a, b, d, r)| CrossObjectPrompt {
                    subject_id: RegionId::new(format!("r{}", a % n)),
                    object_id: RegionId::new(format!("r{}", (a % n + 1 + b % n.max(2)) % n.max(1))),
                    direction: d,
                    relationship: r,
                })
                .filter(|c| c.subject_id != c.object_id)
                .collect();
            singles.push(SingleObjectPrompt {
                region_id: RegionId::background(),
                object_type: bg_type,
                attributes: bg_attrs,
                state: vec![],
            });
            SemanticSpace {
                singles,
                crosses,
                overall: OverallPrompt { lighting, camera, style },
            }
        })
}

proptest! {
    #[test]
    fn document_round_trip(space in arb_space()) {
        let back = SemanticSpace::from_json(&space.to_json()).unwrap();
        prop_assert_eq!(back, space);
    }

    #[test]
    fn valid_spaces_always_flatten(space in arb_space()) {
        let ids: BTreeSet<RegionId> = space.objects().map(|s| s.region_id.clone()).collect();
        prop_assert!(validate(&space, &ids).is_empty());
        for s in &space.singles {
            let text = flatten_region(s, &space.overall).unwrap();
            prop_assert!(!text.contains(",,"));
            prop_assert!(!text.starts_with(',') && !text.ends_with(','));
        }
    }

    #[test]
    fn relationship_prompt_mentions_both_types(space in arb_space()) {
        for c in &space.crosses {
            let text = relationship_prompt(c, &space).unwrap();
            let subj = &space.single(&c.subject_id).unwrap().object_type;
            let obj = &space.single(&c.object_id).unwrap().object_type;
            prop_assert!(text.contains(subj.as_str()), "{} lacks {}", text, subj);
            prop_assert!(text.contains(obj.as_str()), "{} lacks {}", text, obj);
        }
    }
}
