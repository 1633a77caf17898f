//! Dump farthest-point vs farthest-cosine selections for one slide as CSV,
//! for plotting how the two samplers cover a minority feature cluster.

use std::path::Path;

use fedpoint_core::points::PointSet;
use fedpoint_core::sampling::{deterministic_start, fcs, fps, quarter_count};

use crate::experiment::ExperimentError;

/// Columns: point index, x, y, feature norm, pick order under FPS and FCS
/// (empty when the sampler skipped the point).
pub fn write_sampledemo(path: &Path, slide: &PointSet) -> Result<(), ExperimentError> {
    let m = quarter_count(slide.len());
    let start = deterministic_start(slide);
    let fps_sel = fps(slide, m, start).map_err(|e| ExperimentError(format!("{e}")))?;
    let fcs_sel = fcs(slide, m, start).map_err(|e| ExperimentError(format!("{e}")))?;

    let mut fps_order = vec![None; slide.len()];
    for (ord, &i) in fps_sel.indices().iter().enumerate() {
        fps_order[i] = Some(ord);
    }
    let mut fcs_order = vec![None; slide.len()];
    for (ord, &i) in fcs_sel.indices().iter().enumerate() {
        fcs_order[i] = Some(ord);
    }

    let mut out = String::from("index,x,y,feature_norm,fps_order,fcs_order\n");
    for i in 0..slide.len() {
        let c = slide.coord(i);
        let norm: f64 = slide.feature(i).iter().map(|&v| v * v).sum::<f64>().sqrt();
        let f1 = fps_order[i].map(|o| o.to_string()).unwrap_or_default();
        let f2 = fcs_order[i].map(|o| o.to_string()).unwrap_or_default();
        out.push_str(&format!("{i},{:.6},{:.6},{norm:.6},{f1},{f2}\n", c[0], c[1]));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedpoint_core::rng::Rng;

    #[test]
    fn demo_csv_lists_every_point_once() {
        let mut rng = Rng::from_seed(4);
        let coords: Vec<f64> = (0..40).flat_map(|_| [rng.next_f64(), rng.next_f64(), 1.0]).collect();
        let feats: Vec<f64> = (0..40 * 4).map(|_| rng.normal()).collect();
        let slide = PointSet::new(coords, feats, 4, 0).unwrap();
        let dir = std::env::temp_dir().join(format!("fedpoint-demo-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demo.csv");
        write_sampledemo(&path, &slide).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 41);
        // exactly n/4 picks per sampler
        let fps_picks = text.lines().skip(1).filter(|l| !l.split(',').nth(4).unwrap().is_empty()).count();
        assert_eq!(fps_picks, 10);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
