use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{determinant, orthonormality_error, Pose};
use crate::num::{cast, to_f64, Real};

/// Rotations further than this from orthonormal are rejected instead of repaired.
const REPAIR_LIMIT: f64 = 1e-3;

/// Closest rotation in the Frobenius sense (orthogonal polar factor, `det = +1`).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    u * v_t
}

/// One pose per non-empty line, 12 reals forming the row-major `[R | t]`.
pub fn parse_poses<T: Real>(text: &str) -> Result<Vec<Pose<T>>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 12 {
            return Err(Error::format_at_line(
                n,
                format!("expected 12 values, found {}", tokens.len()),
            ));
        }
        let v = super::parse_reals(&tokens, n)?;
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        let det = determinant(&r);
        if (det - 1.0).abs() > 0.1 {
            return Err(Error::Validation(format!(
                "line {n}: rotation determinant {det} is not close to 1"
            )));
        }
        let err = orthonormality_error(&r);
        if err > REPAIR_LIMIT {
            return Err(Error::Validation(format!(
                "line {n}: rotation off orthonormal by {err:e}"
            )));
        }
        let r = nearest_rotation(&r).map(cast::<T>);
        let pose = Pose::new(r, t.map(cast::<T>), poses.len())
            .map_err(|e| Error::Validation(format!("line {n}: {e}")))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_pose_file<T: Real>(path: &Path) -> Result<Vec<Pose<T>>> {
    parse_poses(&super::read_text(path)?)
}

pub fn render_poses<T: Real>(poses: &[Pose<T>]) -> String {
    let mut out = String::new();
    for p in poses {
        let r = p.rotation();
        let t = p.translation();
        let vals = [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ];
        let line: Vec<String> = vals.iter().map(|v| format!("{:e}", to_f64(*v))).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn write_pose_file<T: Real>(poses: &[Pose<T>], path: &Path) -> Result<()> {
    super::write_file(path, render_poses(poses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_translation() {
        let p = parse_poses::<f64>("1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 5 0 1 0 0 0 0 1 -1\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(*p[0].rotation(), Matrix3::identity());
        assert_eq!(*p[1].translation(), Vector3::new(5.0, 0.0, -1.0));
        assert_eq!(p[1].frame_index(), 1);
    }

    #[test]
    fn wrong_token_count_names_line() {
        let err = parse_poses::<f64>("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_poses::<f64>("1 0 0 0 0 1 0 0 0 0 1 x\n").is_err());
    }

    #[test]
    fn bad_determinant_rejected() {
        let err = parse_poses::<f64>("1.2 0 0 0 0 1 0 0 0 0 1 0").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = parse_poses::<f64>("-1 0 0 0 0 1 0 0 0 0 1 0").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    /// Newton iteration `X ← (X + X⁻ᵀ)/2` converges to the orthogonal polar factor.
    fn polar_newton(m: &Matrix3<f64>) -> Matrix3<f64> {
        let mut x = *m;
        for _ in 0..50 {
            x = (x + x.try_inverse().unwrap().transpose()) * 0.5;
        }
        x
    }

    #[test]
    fn mild_perturbation_is_projected() {
        let (s, c) = 0.7f64.sin_cos();
        let mut r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        r[(0, 1)] += 1e-4;
        r[(2, 0)] -= 1e-4;
        r[(1, 2)] += 0.5e-4;
        let line = format!(
            "{} {} {} 1 {} {} {} 2 {} {} {} 3",
            r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]
        );
        let p = &parse_poses::<f64>(&line).unwrap()[0];
        let g = p.rotation().transpose() * p.rotation() - Matrix3::identity();
        assert!(g.abs().max() <= 1e-9);
        let oracle = polar_newton(&r);
        assert!((p.rotation() - oracle).abs().max() <= 1e-9);
    }

    #[test]
    fn render_parse() {
        let poses = vec![Pose::from_yaw(0.4, Vector3::new(1.0, 2.0, 3.0), 0)];
        let back = parse_poses::<f64>(&render_poses(&poses)).unwrap();
        assert!((back[0].rotation() - poses[0].rotation()).abs().max() < 1e-12);
        assert_eq!(back[0].translation(), poses[0].translation());
    }
}
