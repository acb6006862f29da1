//! Parallel error-map evaluation and its CSV / PGM renderings.

use std::fmt::Write as _;

use drrnet_core::analysis::{grid, ErrorMap, ErrorMapPlan, MinAtol, LADDER_CEIL, LADDER_FLOOR};
use drrnet_core::blocks::NetConfig;
use drrnet_core::Element;
use rayon::prelude::*;

use crate::error::{HarnessError, Result};

/// Parses `START:END:STEP`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || HarnessError::Config(format!("grid {spec:?} is not START:END:STEP"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    Ok(grid(v[0], v[1], v[2])?)
}

/// Evaluates all cells on the rayon pool; identical to the sequential map.
pub fn error_map<T: Element>(
    cfg: &NetConfig,
    alpha_grid: Vec<f64>,
    beta_grid: Vec<f64>,
    rtol: f64,
    seed: u64,
) -> Result<ErrorMap> {
    let plan = ErrorMapPlan::<T>::new(cfg, alpha_grid, beta_grid, rtol, seed)?;
    let cells = (0..plan.len())
        .into_par_iter()
        .map(|k| plan.cell(k))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(plan.finish(cells)?)
}

pub fn to_csv(map: &ErrorMap) -> String {
    let mut out = String::from("alpha,beta,min_atol,max_abs_err,max_rel_err\n");
    for c in &map.cells {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.alpha,
            c.beta,
            c.stats.min_atol.value(),
            c.stats.max_abs_err,
            c.stats.max_rel_err
        )
        .unwrap();
    }
    out
}

/// Plain (P2) grayscale image: one row per α, one column per β; black is
/// the ladder floor, white the sentinel.
pub fn to_pgm(map: &ErrorMap) -> String {
    let (w, h) = (map.beta_grid.len(), map.alpha_grid.len());
    let mut out = format!("P2\n# log10 min_atol {LADDER_FLOOR}..{}, rows alpha, columns beta\n{w} {h}\n255\n", LADDER_CEIL + 1);
    for row in map.cells.chunks(w) {
        let px: Vec<String> = row.iter().map(|c| gray(c.stats.min_atol).to_string()).collect();
        out.push_str(&px.join(" "));
        out.push('\n');
    }
    out
}

/// The sentinel is drawn as the decade above the ladder ceiling.
fn gray(m: MinAtol) -> u8 {
    let e = match m {
        MinAtol::Decade(e) => e,
        MinAtol::AboveLadder => LADDER_CEIL + 1,
    };
    let span = (LADDER_CEIL + 1 - LADDER_FLOOR) as f64;
    ((e - LADDER_FLOOR) as f64 / span * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use drrnet_core::analysis::gradient_error_map;
    use drrnet_core::blocks::Pattern;

    fn cfg() -> NetConfig {
        NetConfig {
            width: 4,
            hidden: 8,
            seq_len: 3,
            stages: 1,
            depth_per_stage: 3,
            pattern: Pattern::Interleaved,
            classes: 3,
        }
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.1:1:0.1").unwrap().len(), 10);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:x:0.1").is_err());
    }

    #[test]
    fn parallel_equals_sequential() {
        let a = error_map::<f32>(&cfg(), vec![0.0, 0.5, 1.0], vec![0.5, 1.0], 1e-5, 3).unwrap();
        let b = gradient_error_map::<f32>(&cfg(), vec![0.0, 0.5, 1.0], vec![0.5, 1.0], 1e-5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_and_pgm_layout() {
        let map = error_map::<f64>(&cfg(), vec![0.0, 1.0], vec![0.5, 1.0], 1e-5, 3).unwrap();
        let csv = to_csv(&map);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,beta,min_atol,max_abs_err,max_rel_err");
        assert_eq!(lines.len(), 5);
        let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!((fields[0], fields[1]), (0.0, 0.5));
        assert_eq!(fields[2], map.cells[0].stats.min_atol.value());
        assert_eq!(fields[3], map.cells[0].stats.max_abs_err);
        let pgm = to_pgm(&map);
        assert!(pgm.starts_with("P2\n"));
        assert!(pgm.contains("\n2 2\n255\n"));
        assert_eq!(gray(MinAtol::Decade(-12)), 0);
        assert_eq!(gray(MinAtol::Decade(-1)), 234);
        assert_eq!(gray(MinAtol::AboveLadder), 255);
    }
}
