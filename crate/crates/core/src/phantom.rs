//! Synthetic OCT-A-like volumes with known vessel ground truth.
//!
//! Vessels are tubes rasterized with a cosine-tapered cross-section, the clean
//! image is multiplied by mean-one gamma speckle, and selected en-face rows
//! can be brightened to mimic motion artifacts.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::Volume3D;

const GEOMETRY_STREAM: u64 = 1;
const SPECKLE_STREAM: u64 = 2;

/// A single polyline centerline in voxel coordinates `(z, y, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<[f64; 3]>,
    /// In-plane radius at each point.
    pub radii: Vec<f64>,
    /// Half-extent along z. `None` makes the cross-section circular.
    pub z_half_thickness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselTree {
    pub branches: Vec<Branch>,
    /// Peak brightness added on top of the background.
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// `[Z, H, W]`.
    pub dims: [usize; 3],
    pub n_trees: usize,
    pub radius_range: (f64, f64),
    pub vessel_intensity_range: (f64, f64),
    pub background_level: f64,
    /// Gamma shape `k`; `None` disables speckle.
    pub speckle_shape: Option<f64>,
    /// Maximum full z-thickness of a branch in voxels; below 1 gives round tubes.
    pub depth_jitter: f64,
    pub artifact_rows: Vec<(usize, usize)>,
    pub artifact_gain: f64,
    pub seed: u64,
    /// Centerline length range per root branch (voxels).
    pub branch_length: (f64, f64),
    /// Maximum heading change per unit step (radians).
    pub max_turn: f64,
    /// Maximum z drift per unit in-plane step.
    pub z_slope: f64,
    /// Chance per step of spawning a child branch.
    pub branch_probability: f64,
    pub max_generations: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [16, 96, 96],
            n_trees: 6,
            radius_range: (1.5, 3.0),
            vessel_intensity_range: (110.0, 180.0),
            background_level: 40.0,
            speckle_shape: Some(3.0),
            depth_jitter: 3.0,
            artifact_rows: Vec::new(),
            artifact_gain: 1.0,
            seed: 0,
            branch_length: (40.0, 120.0),
            max_turn: 0.25,
            z_slope: 0.08,
            branch_probability: 0.02,
            max_generations: 2,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (a, b): (f64, f64)| {
            if a <= b && a.is_finite() && b.is_finite() {
                Ok(())
            } else {
                Err(Error::Param(format!("{name} must be ordered, got ({a}, {b})")))
            }
        };
        ordered("radius_range", self.radius_range)?;
        ordered("vessel_intensity_range", self.vessel_intensity_range)?;
        ordered("branch_length", self.branch_length)?;
        if self.radius_range.0 <= 0.0 {
            return Err(Error::Param("radii must be positive".into()));
        }
        if let Some(k) = self.speckle_shape {
            if k <= 0.0 || !k.is_finite() {
                return Err(Error::Param(format!("speckle_shape must be > 0, got {k}")));
            }
        }
        if self.artifact_gain < 1.0 {
            return Err(Error::Param("artifact_gain must be >= 1".into()));
        }
        let [z, h, w] = self.dims;
        let min_span = 2 * self.radius_range.0.ceil() as usize + 1;
        if z == 0 || h < min_span || w < min_span {
            return Err(Error::Dims(format!(
                "dims {:?} cannot hold a tube of radius {}",
                self.dims, self.radius_range.0
            )));
        }
        Ok(())
    }
}

/// Cross-section profile: 1 inside `r − ½`, cosine taper to 0 at `r + ½`.
#[inline]
pub fn tube_profile(d: f64, r: f64) -> f64 {
    let inner = r - 0.5;
    if d <= inner {
        1.0
    } else if d >= r + 0.5 {
        0.0
    } else {
        0.5 * (1.0 + (PI * (d - inner)).cos())
    }
}

/// Clean (noise-free) image and hard ground-truth mask for a set of trees.
///
/// A voxel is vessel iff its (z-rescaled) distance to some centerline is at
/// most the local radius.
pub fn rasterize(trees: &[VesselTree], dims: [usize; 3], background: f64) -> (Array3<f64>, Array3<u8>) {
    let [nz, ny, nx] = dims;
    let mut vessel = Array3::<f64>::zeros((nz, ny, nx));
    let mut mask = Array3::<u8>::zeros((nz, ny, nx));
    for tree in trees {
        for branch in &tree.branches {
            rasterize_branch(branch, tree.intensity, &mut vessel, &mut mask);
        }
    }
    (vessel.mapv(|v| v + background), mask)
}

fn rasterize_branch(branch: &Branch, intensity: f64, vessel: &mut Array3<f64>, mask: &mut Array3<u8>) {
    let (nz, ny, nx) = vessel.dim();
    let r_max = branch.radii.iter().cloned().fold(0.0, f64::max);
    // z is stretched so an ellipsoidal cross-section becomes circular
    let z_scale = match branch.z_half_thickness {
        Some(t) if t > 0.0 => r_max / t,
        _ => 1.0,
    };
    let pts = &branch.points;
    let segments: Vec<(usize, usize)> = match pts.len() {
        0 => return,
        1 => vec![(0, 0)],
        n => (0..n - 1).map(|i| (i, i + 1)).collect(),
    };
    for (i, j) in segments {
        let (p, q) = (pts[i], pts[j]);
        let (rp, rq) = (branch.radii[i], branch.radii[j]);
        let reach = rp.max(rq) + 0.5;
        let z_reach = reach / z_scale;
        let lo = |a: f64, b: f64, m: f64| ((a.min(b) - m).floor().max(0.0)) as usize;
        let hi = |a: f64, b: f64, m: f64, n: usize| (((a.max(b) + m).ceil()) as isize).clamp(-1, n as isize - 1);
        let (z0, z1) = (lo(p[0], q[0], z_reach), hi(p[0], q[0], z_reach, nz));
        let (y0, y1) = (lo(p[1], q[1], reach), hi(p[1], q[1], reach, ny));
        let (x0, x1) = (lo(p[2], q[2], reach), hi(p[2], q[2], reach, nx));
        if z1 < 0 || y1 < 0 || x1 < 0 {
            continue;
        }
        let ps = [p[0] * z_scale, p[1], p[2]];
        let d = [(q[0] - p[0]) * z_scale, q[1] - p[1], q[2] - p[2]];
        let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        for z in z0..=z1 as usize {
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let v = [z as f64 * z_scale - ps[0], y as f64 - ps[1], x as f64 - ps[2]];
                    let t = if len2 > 0.0 {
                        ((v[0] * d[0] + v[1] * d[1] + v[2] * d[2]) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let e = [v[0] - t * d[0], v[1] - t * d[1], v[2] - t * d[2]];
                    let dist = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
                    let r = rp + t * (rq - rp);
                    let prof = intensity * tube_profile(dist, r);
                    let cell = &mut vessel[[z, y, x]];
                    if prof > *cell {
                        *cell = prof;
                    }
                    if dist <= r {
                        mask[[z, y, x]] = 1;
                    }
                }
            }
        }
    }
}

fn random_walk(
    rng: &mut ChaCha8Rng,
    start: [f64; 3],
    heading: f64,
    length: f64,
    radius: f64,
    z_half: Option<f64>,
    spec: &PhantomSpec,
) -> Branch {
    let [nz, ny, nx] = spec.dims;
    let mut pts = vec![start];
    let mut radii = vec![radius];
    let mut pos = start;
    let mut theta = heading;
    let mut dz = rng.random_range(-spec.z_slope..=spec.z_slope);
    let step = 1.0;
    let mut travelled = 0.0;
    while travelled < length {
        theta += rng.random_range(-spec.max_turn..=spec.max_turn);
        dz = (dz + rng.random_range(-0.5..=0.5) * spec.z_slope).clamp(-spec.z_slope, spec.z_slope);
        pos = [
            (pos[0] + dz * step).clamp(0.0, (nz - 1) as f64),
            pos[1] + theta.sin() * step,
            pos[2] + theta.cos() * step,
        ];
        if pos[1] < -radius || pos[2] < -radius || pos[1] > ny as f64 + radius || pos[2] > nx as f64 + radius {
            break;
        }
        pts.push(pos);
        radii.push(radius);
        travelled += step;
    }
    Branch { points: pts, radii, z_half_thickness: z_half }
}

/// Samples random branching trees according to `spec`.
pub fn generate_trees(spec: &PhantomSpec) -> Vec<VesselTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(GEOMETRY_STREAM);
    let [nz, ny, nx] = spec.dims;
    let mut trees = Vec::with_capacity(spec.n_trees);
    for _ in 0..spec.n_trees {
        let intensity = rng.random_range(spec.vessel_intensity_range.0..=spec.vessel_intensity_range.1);
        let radius = rng.random_range(spec.radius_range.0..=spec.radius_range.1);
        let z_half = (spec.depth_jitter >= 1.0).then(|| {
            (rng.random_range(1.0..=spec.depth_jitter) / 2.0).min(radius)
        });
        let start = [
            rng.random_range(0.0..=(nz - 1) as f64),
            rng.random_range(0.0..(ny as f64)),
            rng.random_range(0.0..(nx as f64)),
        ];
        let heading = rng.random_range(0.0..2.0 * PI);
        let length = rng.random_range(spec.branch_length.0..=spec.branch_length.1);

        let mut branches = Vec::new();
        let mut pending = vec![(start, heading, length, radius, 0usize)];
        while let Some((s, h, l, r, generation)) = pending.pop() {
            // grow in both directions from the seed point so roots span the field
            let mut b = random_walk(&mut rng, s, h, l / 2.0, r, z_half, spec);
            let back = random_walk(&mut rng, s, h + PI, l / 2.0, r, z_half, spec);
            let mut pts: Vec<[f64; 3]> = back.points.into_iter().rev().collect();
            pts.extend(b.points.drain(1..));
            b.radii = vec![r; pts.len()];
            b.points = pts;
            if generation < spec.max_generations {
                for p in b.points.iter().step_by(4) {
                    if rng.random_bool((4.0 * spec.branch_probability).clamp(0.0, 1.0)) {
                        let child_r = (r * 0.75).max(spec.radius_range.0);
                        let turn = rng.random_range(PI / 6.0..=PI / 3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                        pending.push((*p, h + turn, l * 0.5, child_r, generation + 1));
                    }
                }
            }
            branches.push(b);
        }
        trees.push(VesselTree { branches, intensity });
    }
    trees
}

/// Multiplies by mean-one gamma noise and clamps to `[0, 255]`.
pub fn apply_speckle(clean: &Array3<f64>, shape: Option<f64>, seed: u64) -> Array3<f64> {
    match shape {
        None => clean.mapv(|v| v.clamp(0.0, 255.0)),
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(SPECKLE_STREAM);
            let gamma = Gamma::new(k, 1.0 / k).expect("validated shape");
            clean.mapv(|v| (v * gamma.sample(&mut rng)).clamp(0.0, 255.0))
        }
    }
}

/// Generates `(volume, mask)`; the mask holds exactly 0 or 1.
pub fn generate_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<(Volume3D<T>, Volume3D<T>)> {
    spec.validate()?;
    let trees = generate_trees(spec);
    let (clean, mask) = rasterize(&trees, spec.dims, spec.background_level);
    let noisy = apply_speckle(&clean, spec.speckle_shape, spec.seed);
    let vol = Volume3D::new(noisy.mapv(T::lit))?;
    let vol = inject_motion_artifact(&vol, &spec.artifact_rows, spec.artifact_gain)?;
    let mask = Volume3D::new(mask.mapv(|m| T::lit(m as f64)))?;
    Ok((vol, mask))
}

/// Scales each listed `(z, y)` en-face row by `gain` and clamps to `[0, 255]`.
pub fn inject_motion_artifact<T: Scalar>(vol: &Volume3D<T>, rows: &[(usize, usize)], gain: f64) -> Result<Volume3D<T>> {
    if gain < 1.0 || !gain.is_finite() {
        return Err(Error::Param(format!("artifact gain must be >= 1, got {gain}")));
    }
    let [nz, ny, _] = vol.dims();
    if let Some(&(z, y)) = rows.iter().find(|(z, y)| *z >= nz || *y >= ny) {
        return Err(Error::OutOfRange(format!("artifact row ({z}, {y}) outside {nz}x{ny}")));
    }
    if rows.is_empty() || gain == 1.0 {
        return Ok(vol.clone());
    }
    let mut data = vol.data().clone();
    let g = T::lit(gain);
    let max = T::lit(255.0);
    let mut seen = std::collections::BTreeSet::new();
    for &(z, y) in rows {
        if !seen.insert((z, y)) {
            continue;
        }
        for v in data.slice_mut(ndarray::s![z, y, ..]).iter_mut() {
            *v = (*v * g).min(max).max(T::zero());
        }
    }
    vol.with_data(data)
}

/// A volume engineered so that fusing slice `target_z` with its neighbors
/// projects a vessel that is absent from the target.
#[derive(Clone, Debug)]
pub struct PhantomVesselCase<T> {
    pub volume: Volume3D<T>,
    /// Exact per-slice ground truth.
    pub mask: Volume3D<T>,
    pub target_z: usize,
    pub radius: usize,
    /// In-plane footprint of vessel A (present only at `target_z`).
    pub vessel_a: Array2<bool>,
    /// In-plane footprint of vessel B (present only in the neighbors).
    pub vessel_b: Array2<bool>,
}

/// Builds the phantom-vessel hazard for fusion radius `r`.
///
/// Vessel A lives only in the middle slice, vessel B only in the `r` slices
/// above and below it; their in-plane footprints occupy opposite halves of
/// the field and never touch.
pub fn make_phantom_vessel_case<T: Scalar>(spec: &PhantomSpec, r: usize) -> Result<PhantomVesselCase<T>> {
    spec.validate()?;
    let [nz, ny, nx] = spec.dims;
    if nz < 2 * r + 1 {
        return Err(Error::Dims(format!("depth {nz} < 2R+1 = {}", 2 * r + 1)));
    }
    let target_z = nz / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(GEOMETRY_STREAM);

    let r_max = spec.radius_range.1;
    let margin = r_max + 1.5;
    let half = ny as f64 / 2.0;
    let a_top = rng.random_bool(0.5);
    let mut in_plane = |top: bool| -> (Branch, f64) {
        let radius = rng.random_range(spec.radius_range.0..=spec.radius_range.1);
        let (lo, hi) = if top { (margin, half - margin) } else { (half + margin, ny as f64 - margin) };
        let mut y = rng.random_range(lo..=hi.max(lo));
        let mut theta: f64 = rng.random_range(-0.3..=0.3);
        let mut pts = Vec::new();
        let mut x = 0.0;
        while x <= (nx - 1) as f64 {
            pts.push([0.0, y, x]);
            theta = (theta + rng.random_range(-spec.max_turn..=spec.max_turn)).clamp(-0.6, 0.6);
            x += theta.cos();
            y = (y + theta.sin()).clamp(lo, hi.max(lo));
        }
        let radii = vec![radius; pts.len()];
        let intensity = rng.random_range(spec.vessel_intensity_range.0..=spec.vessel_intensity_range.1);
        (Branch { points: pts, radii, z_half_thickness: None }, intensity)
    };
    let (branch_a, int_a) = in_plane(a_top);
    let (branch_b, int_b) = in_plane(!a_top);

    let plane = |branch: &Branch, intensity: f64| {
        let tree = VesselTree { branches: vec![branch.clone()], intensity };
        let (clean, mask) = rasterize(&[tree], [1, ny, nx], 0.0);
        (clean.index_axis_move(ndarray::Axis(0), 0), mask.index_axis_move(ndarray::Axis(0), 0))
    };
    let (clean_a, mask_a) = plane(&branch_a, int_a);
    let (clean_b, mask_b) = plane(&branch_b, int_b);

    let mut clean = Array3::<f64>::from_elem((nz, ny, nx), spec.background_level);
    let mut mask = Array3::<u8>::zeros((nz, ny, nx));
    for z in 0..nz {
        let offset = z.abs_diff(target_z);
        let (c, m) = if offset == 0 {
            (&clean_a, &mask_a)
        } else if offset <= r {
            (&clean_b, &mask_b)
        } else {
            continue;
        };
        let mut cs = clean.index_axis_mut(ndarray::Axis(0), z);
        cs += c;
        mask.index_axis_mut(ndarray::Axis(0), z).assign(m);
    }
    let noisy = apply_speckle(&clean, spec.speckle_shape, spec.seed);
    Ok(PhantomVesselCase {
        volume: Volume3D::new(noisy.mapv(T::lit))?,
        mask: Volume3D::new(mask.mapv(|m| T::lit(m as f64)))?,
        target_z,
        radius: r,
        vessel_a: mask_a.mapv(|m| m == 1),
        vessel_b: mask_b.mapv(|m| m == 1),
    })
}
