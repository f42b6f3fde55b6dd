//! Operators on grid fields: unfolding, truncation, interface measure and
//! signed distance.

mod distance;
mod perimeter;
mod unfold;

pub use distance::{signed_distance, signed_distance_from_field, Interface};
pub use perimeter::{perimeter, phase_indicator};
pub use unfold::{floor_lattice, unfold, unfolding_defect, LayerConvention, UnfoldedField};

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Radial truncation `z -> z` if `|z| <= R`, else `R z / |z|`, applied node by node.
pub fn truncate(u: &GridField, radius: f64) -> Result<GridField> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("truncation radius must be positive, got {radius}")));
    }
    let m = u.phase_dim();
    let mut values = u.values().to_vec();
    for v in values.chunks_exact_mut(m) {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > radius {
            let s = radius / n;
            v.iter_mut().for_each(|c| *c *= s);
        }
    }
    u.with_values(m, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncate_inside_ball_is_identity() {
        let u = GridField::from_fn(vec![0.0], vec![1.0], vec![11], 2, |x, o| {
            o[0] = 0.3 * x[0];
            o[1] = -0.2;
        })
        .unwrap();
        assert_eq!(truncate(&u, 1.0).unwrap(), u);
    }

    #[test]
    fn truncate_clips_radially() {
        let r = 0.7;
        let u = GridField::constant(vec![0.0, 0.0], vec![1.0, 1.0], vec![3, 3], &[2.0 * r, 0.0]).unwrap();
        let t = truncate(&u, r).unwrap();
        assert!(t.values().chunks(2).all(|v| (v[0] - r).abs() < 1e-15 && v[1] == 0.0));
    }

    #[test]
    fn truncate_does_not_raise_dirichlet_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u = GridField::from_fn(vec![0.0, 0.0], vec![1.0, 1.0], vec![9, 9], 2, |_, o| {
                o[0] = rng.gen_range(-2.0..2.0);
                o[1] = rng.gen_range(-2.0..2.0);
            })
            .unwrap();
            let r = rng.gen_range(0.2..2.0);
            let t = truncate(&u, r).unwrap();
            assert!(t.dirichlet_energy() <= u.dirichlet_energy() * (1.0 + 1e-14));
            assert!(t.sup_norm() <= r * (1.0 + 1e-15));
            let tt = truncate(&t, r).unwrap();
            assert!(tt.values().iter().zip(t.values()).all(|(p, q)| (p - q).abs() <= 1e-15));
        }
    }

    #[test]
    fn truncate_rejects_nonpositive_radius() {
        let u = GridField::constant(vec![0.0], vec![1.0], vec![3], &[1.0]).unwrap();
        assert!(truncate(&u, 0.0).is_err());
    }
}
