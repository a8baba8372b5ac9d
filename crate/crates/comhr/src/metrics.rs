//! Pose metrics shared by the losses and the evaluation harness.

/// Mean per-joint position error after root alignment: both poses are
/// shifted so joint 0 (the pelvis) sits at the origin, then joint-wise
/// Euclidean distances are averaged.
pub fn root_aligned_mpjpe(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    debug_assert!(!a.is_empty());
    let (ra, rb) = (a[0], b[0]);
    let mut total = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        let dx = (pa[0] - ra[0]) - (pb[0] - rb[0]);
        let dy = (pa[1] - ra[1]) - (pb[1] - rb[1]);
        let dz = (pa[2] - ra[2]) - (pb[2] - rb[2]);
        total += (dx * dx + dy * dy + dz * dz).sqrt();
    }
    total / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_poses_have_zero_error() {
        let pose = vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-1.0, 0.5, 0.2]];
        assert_eq!(root_aligned_mpjpe(&pose, &pose), 0.0);
    }

    #[test]
    fn rigid_translation_is_removed() {
        let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let b: Vec<[f64; 3]> = a.iter().map(|p| [p[0] + 5.0, p[1] - 2.0, p[2] + 9.0]).collect();
        assert!(root_aligned_mpjpe(&a, &b) < 1e-12);
    }

    #[test]
    fn unit_offset_on_one_joint() {
        let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let b = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!((root_aligned_mpjpe(&a, &b) - 0.5).abs() < 1e-12);
    }
}
