use std::path::Path;

use ccwsi_core::image::{save_image, RasterImage};
use ccwsi_study::{CaseEntry, StudyDefinition};

/// Definition with `n` cases whose images are tiny solid PNGs: H&E grey,
/// traditional red, synthetic blue.
pub fn definition(dir: &Path, n: usize, reviewers: &[&str], seed: u64) -> StudyDefinition {
    let cases = (0..n)
        .map(|i| {
            let case_id = format!("case-{i:02}");
            let mut paths = Vec::new();
            for (kind, rgb) in [
                ("he", [128, 128, 128]),
                ("trad", [200, 10, 10]),
                ("syn", [10, 10, 200]),
            ] {
                let p = dir.join(format!("{case_id}-{kind}.png"));
                save_image(&RasterImage::filled(4, 3, rgb).unwrap(), &p).unwrap();
                paths.push(p);
            }
            CaseEntry {
                case_id,
                he_image: paths[0].clone(),
                traditional_sox10: paths[1].clone(),
                synthetic_sox10: paths[2].clone(),
            }
        })
        .collect();
    StudyDefinition {
        cases,
        seed,
        reviewers: reviewers.iter().map(|s| s.to_string()).collect(),
    }
}
