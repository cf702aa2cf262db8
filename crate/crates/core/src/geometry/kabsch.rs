//! Rigid and similarity alignment of paired point sets.

use nalgebra::{Matrix3, Vector3};

/// A fitted transform `x ↦ scale · rotation · x + translation`.
/// `scale` is 1 for rigid fits.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Least-squares alignment mapping `source` onto `target` (paired by index).
///
/// With `with_scale` the similarity version is solved; otherwise rigid.
/// The rotation is always proper (determinant +1, reflections corrected
/// through the sign of the smallest singular value). Fails when fewer than
/// three pairs are given or the centred source is collinear, which leaves
/// the rotation underdetermined.
pub fn kabsch(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    with_scale: bool,
) -> crate::Result<Alignment> {
    if source.len() != target.len() {
        return Err(crate::Error::DimensionMismatch {
            context: "kabsch pairs",
            expected: source.len(),
            got: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(crate::Error::Degenerate(format!(
            "alignment needs at least 3 point pairs, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let s_mean: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n;
    let t_mean: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    let mut s_var = 0.0;
    for (s, t) in source.iter().zip(target) {
        let sc = s - s_mean;
        let tc = t - t_mean;
        h += sc * tc.transpose();
        s_var += sc.norm_squared();
    }

    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sigma = svd.singular_values;
    if !(sigma[0] > 0.0) || sigma[1] <= sigma[0] * 1e-12 {
        return Err(crate::Error::Degenerate(
            "point pairs are collinear or coincident; rotation is underdetermined".into(),
        ));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();

    let scale = if with_scale {
        if s_var <= 0.0 {
            return Err(crate::Error::Degenerate(
                "source points are coincident; scale is underdetermined".into(),
            ));
        }
        (sigma[0] + sigma[1] + d * sigma[2]) / s_var
    } else {
        1.0
    };
    let translation = t_mean - scale * (rotation * s_mean);
    Ok(Alignment {
        rotation,
        translation,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{orthonormality_deviation, rodrigues};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_random_rigid_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = rodrigues(&Vector3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ));
            let t = Vector3::new(rng.gen_range(-2.0..2.0), 0.3, rng.gen_range(-2.0..2.0));
            let source: Vec<Vector3<f64>> = (0..40)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let target: Vec<Vector3<f64>> = source.iter().map(|p| r * p + t).collect();
            let fit = kabsch(&source, &target, false).unwrap();
            assert!((fit.rotation - r).norm() < 1e-10);
            assert_abs_diff_eq!(fit.translation, t, epsilon = 1e-10);
            assert_eq!(fit.scale, 1.0);
        }
    }

    #[test]
    fn recovers_similarity_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = rodrigues(&Vector3::new(0.4, -0.8, 0.2));
        let t = Vector3::new(1.0, 2.0, -0.5);
        let s = 2.37;
        let source: Vec<Vector3<f64>> = (0..25)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let target: Vec<Vector3<f64>> = source.iter().map(|p| s * (r * p) + t).collect();
        let fit = kabsch(&source, &target, true).unwrap();
        assert_abs_diff_eq!(fit.scale, s, epsilon = 1e-10);
        for (a, b) in source.iter().zip(&target) {
            assert_abs_diff_eq!(fit.apply(a), *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn never_returns_a_reflection() {
        // Planar points with a mirrored target tempt the unconstrained
        // solution toward det = -1.
        let source = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let target: Vec<Vector3<f64>> = source.iter().map(|p| Vector3::new(p.y, p.x, p.z)).collect();
        let fit = kabsch(&source, &target, false).unwrap();
        assert!(fit.rotation.determinant() > 0.0);
        assert!(orthonormality_deviation(&fit.rotation) < 1e-12);
    }

    #[test]
    fn collinear_points_error() {
        let source: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let target = source.clone();
        assert!(matches!(
            kabsch(&source, &target, false),
            Err(crate::Error::Degenerate(_))
        ));
    }
}
