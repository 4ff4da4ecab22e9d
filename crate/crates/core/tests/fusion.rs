use ndarray::{Array2, Axis};
use octa_core::fusion::{lif_slice, lif_volume, local_weights, FusionParams};
use octa_core::phantom::{generate_phantom, tube_profile, PhantomSpec};
use octa_core::registration::RegParams;
use octa_core::{EnFaceSlice, Volume3D};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stack(seed: u64, z: usize, h: usize, w: usize) -> Volume3D<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = ndarray::Array3::from_shape_simple_fn((z, h, w), || rng.random_range(0.0f32..255.0));
    Volume3D::new(data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn weights_normalized_and_fusion_convex(seed in 0u64..10_000, radius in 0usize..3, beta in 0.5f64..3.0, eps in 1e-3f64..0.5) {
        let vol = random_stack(seed, 5, 24, 24);
        let params = FusionParams { radius, beta, eps, ..Default::default() };
        let reg = RegParams { levels: 1, iters_per_level: 5, ..Default::default() };
        let z = (seed % 5) as usize;
        let res = lif_slice(&vol, z, &params, &reg).unwrap();
        for s in res.weights.sum_axis(Axis(0)).iter() {
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        prop_assert!(res.weights.iter().all(|&w| w >= 0.0));

        prop_assert_eq!(res.offsets[0], 0);
        let (lo, hi) = vol.min_max();
        prop_assert!(res.lif.data.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn fused_pixels_are_convex_combinations(seed in 0u64..10_000, k in 1usize..6) {
        let vol = random_stack(seed, k, 16, 16);
        let atlases = vol.slices();
        let params = FusionParams::default();
        let w = local_weights(&atlases[0], &atlases, &params).unwrap();
        for ((y, x), s) in w.sum_axis(Axis(0)).indexed_iter() {
            prop_assert!((s - 1.0).abs() < 1e-6);
            let fused: f64 = (0..k).map(|i| w[[i, y, x]] * atlases[i].data[[y, x]] as f64).sum();
            let vals: Vec<f64> = (0..k).map(|i| atlases[i].data[[y, x]] as f64).collect();
            let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
            let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(fused >= lo - 1e-9 && fused <= hi + 1e-9);
        }
    }
}

fn fwhm(profile: &[f64]) -> f64 {
    let (lo, hi) = profile.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let half = (lo + hi) / 2.0;
    let above: Vec<usize> = (0..profile.len()).filter(|&i| profile[i] >= half).collect();
    let (a, b) = (above[0], *above.last().unwrap());
    // linear interpolation of both half-max crossings
    let left = a as f64 - (profile[a] - half) / (profile[a] - profile[a - 1]);
    let right = b as f64 + (profile[b] - half) / (profile[b] - profile[b + 1]);
    right - left
}

#[test]
fn lif_keeps_tube_width() {
    let slice = Array2::from_shape_fn((48, 48), |(_, x)| 40.0 + 120.0 * tube_profile((x as f64 - 23.5).abs(), 3.0));
    let vol = Volume3D::from_slices(&vec![slice.clone(); 5]).unwrap();
    let res = lif_slice(&vol, 2, &FusionParams::default(), &RegParams::default()).unwrap();
    let before: Vec<f64> = slice.row(24).to_vec();
    let after: Vec<f64> = res.lif.data.row(24).to_vec();
    assert!((fwhm(&before) - fwhm(&after)).abs() <= 1.0);
}

#[test]
fn lif_smooths_background_speckle() {
    let spec = PhantomSpec { dims: [10, 64, 64], n_trees: 4, seed: 21, ..Default::default() };
    let (vol, mask) = generate_phantom::<f32>(&spec).unwrap();
    let params = FusionParams { radius: 2, ..Default::default() };
    let (lif, _) = lif_volume(&vol, &params, &RegParams::default()).unwrap();
    let bg_std = |v: &Volume3D<f32>, z: usize| {
        let vals: Vec<f64> = v
            .slice_view(z)
            .iter()
            .zip(mask.slice_view(z).iter())
            .filter(|(_, &m)| m == 0.0)
            .map(|(&x, _)| x as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
    };
    let improved = (0..10).filter(|&z| bg_std(&lif, z) < bg_std(&vol, z)).count();
    assert!(improved >= 9, "background std lower on {improved}/10 slices");
}

#[test]
fn constant_volume_stays_constant() {
    let vol = Volume3D::filled([4, 20, 20], 77.0f32).unwrap();
    let (lif, ce) = lif_volume(&vol, &FusionParams::default(), &RegParams::default()).unwrap();
    assert!(lif.data().iter().all(|&v| v == 77.0));
    assert!(ce.data().iter().all(|&v| v == 77.0));
    let s = EnFaceSlice::new(Array2::from_elem((3, 3), 1.0f32), 0);
    assert!(local_weights(&s, &[], &FusionParams::default()).is_err());
}
