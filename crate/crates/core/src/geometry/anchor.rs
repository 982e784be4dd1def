use super::canny::EdgeMap;
use super::mask::RasterMask;
use crate::error::{Error, Result};

/// One object layer handed to [`compose_anchor`].
#[derive(Debug, Clone)]
pub struct AnchorLayer {
    pub edges: EdgeMap,
    pub mask: RasterMask,
    pub z: u32,
}

/// Composite object layers into one anchor edge map.
///
/// Higher `z` occludes lower `z`: wherever masks overlap the lower layer loses
/// both its mask pixels and its edge pixels. Equal `z` values keep input
/// order (later occludes earlier). Returned masks follow input order and are
/// pairwise disjoint.
pub fn compose_anchor(layers: &[AnchorLayer]) -> Result<(EdgeMap, Vec<RasterMask>)> {
    let Some(first) = layers.first() else {
        return Err(Error::invalid("compose_anchor needs at least one layer"));
    };
    let dims = first.mask.dims();
    for layer in layers {
        if layer.mask.dims() != dims || layer.edges.dims() != dims {
            return Err(Error::invalid(format!(
                "anchor layer dimensions differ from {}x{}",
                dims.0, dims.1
            )));
        }
    }

    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by_key(|&i| layers[i].z);

    // Walk from the top layer down, accumulating what is already covered.
    let mut covered = RasterMask::new(dims.0, dims.1)?;
    let mut anchor = RasterMask::new(dims.0, dims.1)?;
    let mut masks = vec![None; layers.len()];
    for &i in order.iter().rev() {
        let layer = &layers[i];
        let visible_mask = layer.mask.difference(&covered)?;
        let visible_edges = layer.edges.as_mask().difference(&covered)?;
        anchor.union_with(&visible_edges)?;
        covered.union_with(&layer.mask)?;
        masks[i] = Some(visible_mask);
    }
    let masks = masks.into_iter().map(|m| m.expect("every layer visited")).collect();
    Ok((EdgeMap(anchor), masks))
}
