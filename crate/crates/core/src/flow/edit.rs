use crate::error::{Error, Result};
use crate::flow::{check_score, forward_map, reverse_map, CnfModel, LatentVector};

/// Largest supported score change in either direction.
pub const MAX_EDIT_DELTA: f64 = 0.4;

pub fn clamp_score(s: f64) -> f64 {
    s.clamp(0.0, 1.0)
}

/// Moves `w` from score `s_orig` to `clamp(s_orig + delta)`: the latent is
/// mapped to its base code under the original score and regenerated under
/// the target score. Returns the edited latent and the target score.
pub fn edit_latent(
    model: &CnfModel,
    w: &LatentVector,
    s_orig: f64,
    delta: f64,
) -> Result<(LatentVector, f64)> {
    check_score(s_orig)?;
    if !(delta.abs() <= MAX_EDIT_DELTA + 1e-12) {
        return Err(Error::invalid(format!(
            "edit delta {delta} outside [-{MAX_EDIT_DELTA}, {MAX_EDIT_DELTA}]"
        )));
    }
    let target = clamp_score(s_orig + delta);
    let z = reverse_map(model, w, s_orig)?;
    let edited = forward_map(model, &z, target)?;
    Ok((edited, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;

    #[test]
    fn target_is_clamped() {
        let m = CnfModel::zeros(&FlowConfig::new(2, vec![3], 2), "x").unwrap();
        let w = LatentVector::new(vec![0.3, 0.1]).unwrap();
        let (_, t) = edit_latent(&m, &w, 0.9, 0.4).unwrap();
        assert_eq!(t, 1.0);
        let (_, t) = edit_latent(&m, &w, 0.1, -0.4).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn zero_delta_is_identity() {
        let mut cfg = FlowConfig::new(3, vec![6], 4);
        cfg.output_gain = 1.0;
        let m = CnfModel::init(&cfg, "x", 2).unwrap();
        let w = LatentVector::new(vec![0.3, -0.6, 1.1]).unwrap();
        let (e, t) = edit_latent(&m, &w, 0.45, 0.0).unwrap();
        assert_eq!(t, 0.45);
        assert!(e.max_abs_diff(&w) < 1e-3);
    }

    #[test]
    fn delta_out_of_range() {
        let m = CnfModel::zeros(&FlowConfig::new(2, vec![3], 2), "x").unwrap();
        assert!(edit_latent(&m, &LatentVector::zeros(2), 0.5, 0.5).is_err());
    }
}
