//! Small fixed-size vector helpers for 3D point clouds.

use rand::Rng;
use rand_distr::StandardNormal;

pub type Vec3 = [f64; 3];
pub type Rot3 = [[f64; 3]; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Uniform-weight centroid; `None` for an empty slice.
pub fn centroid(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    Some(scale(c, 1.0 / points.len() as f64))
}

#[inline]
pub fn rotate(r: &Rot3, v: Vec3) -> Vec3 {
    [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
}

pub fn identity() -> Rot3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Uniformly distributed rotation from a normalised Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rot3 {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Angle at `b` in degrees.
pub fn angle_deg(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let u = sub(a, b);
    let v = sub(c, b);
    let cos = (dot(u, v) / (norm(u) * norm(v))).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Rounds every coordinate to six decimals, the precision of the XYZ format.
pub fn quantize(p: Vec3) -> Vec3 {
    p.map(|v| format!("{v:.6}").parse::<f64>().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_rotation_is_orthonormal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let d = dot(r[i], r[j]);
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((d - e).abs() < 1e-12);
                }
            }
            // proper rotation
            assert!((dot(cross(r[0], r[1]), r[2]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn right_angle() {
        assert!((angle_deg([1.0, 0.0, 0.0], [0.0; 3], [0.0, 2.0, 0.0]) - 90.0).abs() < 1e-12);
    }
}
