//! Acceptance suite: ten criteria covering the math kernels against
//! independent oracles and the end-to-end phantom pipeline in both
//! directions of every ablation. One test per criterion.

use std::sync::OnceLock;
use std::time::Instant;

use candle_core::{Device, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use contourdiff::dataio::{BinaryMask, Domain, RunConfig, SliceImage, Volume};
use contourdiff::diffusion::{
    build_schedule, ddim_sample_batch, ddim_step, forward_noise, gaussian_latent, sample_adjacent,
    to_slice_image, train_translator, ConditioningBundle, TrainedTranslator,
};
use contourdiff::imageproc::{add_noise_snr_unclamped, adjust_contrast_unclamped, ContourMap};
use contourdiff::metrics::{
    assd_3d, dice_3d, fid, hd95, kid, surface_points_3d, FeatureSet,
    MetricReport,
};
use contourdiff::phantom::{generate_phantom_dataset, PhantomDataset, PhantomSpec};
use contourdiff::pipeline::{
    edge_alignment_report, heldout_split, seg_transfer, translate_with_options, StageOptions,
};
use contourdiff::scgd::{adjacent_coherence, translate_dataset, TranslationOptions};

const SEED: u64 = 7;

fn base_config() -> RunConfig {
    let mut config = RunConfig::desk_scale();
    config.resolution = 32;
    config.width_factor = 0.125;
    config.train_steps = 1200;
    config.seed = SEED;
    config
}

fn phantom_spec() -> PhantomSpec {
    PhantomSpec {
        n_volumes: 20,
        n_test_volumes: 6,
        n_zeroshot_volumes: 8,
        slices_per_volume: 8,
        resolution: 32,
        seed: SEED,
        ..PhantomSpec::default()
    }
}

/// Expensive shared artifacts: the phantom dataset, the base translator
/// (p_adj = 0.2), its translation of the labeled input volumes, and the
/// three reference segmentation runs.
struct Heavy {
    dataset: PhantomDataset,
    config: RunConfig,
    translator: TrainedTranslator,
    translated: Vec<Volume>,
    report_translated: MetricReport,
    report_no_adapt: MetricReport,
    report_ub: MetricReport,
}

fn dsc(report: &MetricReport) -> f64 {
    report.dsc.expect("DSC summary present").mean
}

static HEAVY: OnceLock<Heavy> = OnceLock::new();

fn heavy() -> &'static Heavy {
    HEAVY.get_or_init(|| {
        let device = Device::Cpu;
        let config = base_config();
        let dataset = generate_phantom_dataset(&phantom_spec()).expect("phantom generation");
        let t0 = Instant::now();
        let translator =
            train_translator(&dataset.output_train, &config, &device).expect("translator training");
        eprintln!("[fixture] translator trained in {:.0} s", t0.elapsed().as_secs_f64());

        let t0 = Instant::now();
        let translation = translate_with_options(
            &translator.model,
            &translator.schedule,
            &dataset.input_train,
            &config,
            &StageOptions::default(),
            &device,
        )
        .expect("translation");
        assert!(translation.failures.is_empty(), "translation failures: {:?}", translation.failures);
        eprintln!("[fixture] input volumes translated in {:.0} s", t0.elapsed().as_secs_f64());

        let (ub_train, test) = heldout_split(&dataset);
        let (_, report_translated) =
            seg_transfer(&translation.volumes, test, &config, "translated", &device)
                .expect("seg on translated");
        let (_, report_no_adapt) =
            seg_transfer(&dataset.input_train, test, &config, "no-adapt", &device)
                .expect("seg no-adapt");
        let (_, report_ub) =
            seg_transfer(ub_train, test, &config, "upper-bound", &device).expect("seg upper bound");
        eprintln!(
            "[fixture] DSC translated {:.3} no-adapt {:.3} UB {:.3}",
            dsc(&report_translated),
            dsc(&report_no_adapt),
            dsc(&report_ub)
        );

        Heavy {
            dataset,
            config,
            translator,
            translated: translation.volumes,
            report_translated,
            report_no_adapt,
            report_ub,
        }
    })
}

// ---------------------------------------------------------------------
// Criterion 1: surface/overlap metrics vs O(n^2) brute-force references.
// ---------------------------------------------------------------------

fn brute_dice(a: &[BinaryMask], b: &[BinaryMask]) -> f64 {
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (ma, mb) in a.iter().zip(b) {
        for (&x, &y) in ma.pixels().iter().zip(mb.pixels()) {
            inter += usize::from(x && y);
            na += usize::from(x);
            nb += usize::from(y);
        }
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Boundary voxels (foreground with a background 6-neighbor) as (z, r, c).
fn brute_surface(masks: &[BinaryMask]) -> Vec<[f64; 3]> {
    let depth = masks.len() as i64;
    let (h, w) = (masks[0].height() as i64, masks[0].width() as i64);
    let at = |z: i64, r: i64, c: i64| {
        z >= 0 && r >= 0 && c >= 0 && z < depth && r < h && c < w
            && masks[z as usize].get(r as usize, c as usize)
    };
    let mut out = Vec::new();
    for z in 0..depth {
        for r in 0..h {
            for c in 0..w {
                if at(z, r, c)
                    && (!at(z - 1, r, c) || !at(z + 1, r, c) || !at(z, r - 1, c)
                        || !at(z, r + 1, c) || !at(z, r, c - 1) || !at(z, r, c + 1))
                {
                    out.push([z as f64, r as f64, c as f64]);
                }
            }
        }
    }
    out
}

fn brute_nearest(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn brute_assd(a: &[BinaryMask], b: &[BinaryMask]) -> f64 {
    let sa = brute_surface(a);
    let sb = brute_surface(b);
    let d_ab = brute_nearest(&sa, &sb);
    let d_ba = brute_nearest(&sb, &sa);
    d_ab.iter().chain(&d_ba).sum::<f64>() / (d_ab.len() + d_ba.len()) as f64
}

fn brute_percentile(mut values: Vec<f64>, p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (rank - lo as f64)
}

fn brute_hd95(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    brute_percentile(brute_nearest(a, b), 95.0).max(brute_percentile(brute_nearest(b, a), 95.0))
}

fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
    // Random blob: threshold the distance to a random center.
    let cr = rng.gen_range(0.0..h as f64);
    let cc = rng.gen_range(0.0..w as f64);
    let radius = rng.gen_range(1.5..h as f64 / 2.0);
    let mut m = BinaryMask::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
            if d < radius && rng.gen_bool(0.9) {
                m.set(r, c, true);
            }
        }
    }
    m
}

#[test]
fn c01_metric_oracle_suite() {
    let t0 = Instant::now();
    let mut rng = contourdiff::rng::stream(SEED, "acceptance/metric-oracle");
    let mut compared = 0usize;
    while compared < 100 {
        let h = rng.gen_range(4..=32usize);
        let w = rng.gen_range(4..=32usize);
        let depth = rng.gen_range(1..=3usize);
        let a: Vec<BinaryMask> = (0..depth).map(|_| random_mask(&mut rng, h, w)).collect();
        let b: Vec<BinaryMask> = (0..depth).map(|_| random_mask(&mut rng, h, w)).collect();
        compared += 2 * depth;

        let d = dice_3d(&a, &b).unwrap();
        assert!((d - brute_dice(&a, &b)).abs() < 1e-9, "dice mismatch");

        let sa = brute_surface(&a);
        let sb = brute_surface(&b);
        if !sa.is_empty() && !sb.is_empty() {
            let assd = assd_3d(&a, &b, [1.0, 1.0, 1.0]).unwrap();
            assert!((assd - brute_assd(&a, &b)).abs() < 1e-9, "assd mismatch");

            let pa = surface_points_3d(&a, [1.0, 1.0, 1.0]);
            let pb = surface_points_3d(&b, [1.0, 1.0, 1.0]);
            let h95 = hd95(&pa, &pb).unwrap();
            assert!((h95 - brute_hd95(&sa, &sb)).abs() < 1e-9, "hd95 mismatch");
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "oracle suite took {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 2: forward-noise moments, single-step inversion, gradients.
// ---------------------------------------------------------------------

#[test]
fn c02_diffusion_math() {
    let device = Device::Cpu;
    let schedule = build_schedule(1000, 1e-4, 0.02).unwrap();
    let mut rng = contourdiff::rng::stream(SEED, "acceptance/diffusion-math");

    // Monte-Carlo moments of x_t = sqrt(ab) x0 + sqrt(1-ab) eps at n = 1e4.
    for t in [100usize, 500, 1000] {
        let ab = schedule.alpha_bar(t);
        let x0 = [0.6f32];
        let n = 10_000;
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for _ in 0..n {
            let eps = [rng.sample::<f32, _>(StandardNormal)];
            let x_t = forward_noise(&x0, t, &eps, &schedule).unwrap()[0] as f64;
            sum += x_t;
            sum_sq += x_t * x_t;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expected_mean = ab.sqrt() * 0.6;
        let expected_var = 1.0 - ab;
        assert!(
            (mean - expected_mean).abs() <= 0.03 * expected_mean.abs().max(expected_var),
            "t={t}: mean {mean} vs {expected_mean}"
        );
        assert!(
            (var - expected_var).abs() <= 0.03 * expected_var,
            "t={t}: var {var} vs {expected_var}"
        );
    }

    // Single-step inversion: with the true noise as the prediction, one
    // DDIM step from t straight to 0 recovers x0.
    let n = 256;
    let x0: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    for t in [1usize, 50, 100] {
        let eps: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x_t = forward_noise(&x0, t, &eps, &schedule).unwrap();
        let recovered = ddim_step(&x_t, t, 0, &eps, &schedule).unwrap();
        for (r, x) in recovered.iter().zip(&x0) {
            assert!((r - x).abs() < 1e-6, "t={t}: {r} vs {x}");
        }
    }

    // Noise-prediction MSE gradient on a two-parameter toy denoiser
    // pred = a x + b, autodiff vs central finite differences in f64.
    let xs: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let ys: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let x = Tensor::from_vec(xs.clone(), (1, 1, 16, 16), &device).unwrap();
    let y = Tensor::from_vec(ys.clone(), (1, 1, 16, 16), &device).unwrap();
    let (a0, b0) = (0.7f64, -0.2f64);
    let a = Var::new(a0 as f32, &device).unwrap();
    let b = Var::new(b0 as f32, &device).unwrap();
    let pred = x
        .broadcast_mul(a.as_tensor())
        .unwrap()
        .broadcast_add(b.as_tensor())
        .unwrap();
    let loss = contourdiff::diffusion::train::epsilon_loss(&pred, &y).unwrap();
    let grads = loss.backward().unwrap();
    let ga = grads.get(a.as_tensor()).unwrap().to_scalar::<f32>().unwrap() as f64;
    let gb = grads.get(b.as_tensor()).unwrap().to_scalar::<f32>().unwrap() as f64;

    let loss_f64 = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&xv, &yv)| (a * xv as f64 + b - yv as f64).powi(2))
            .sum::<f64>()
            / n as f64
    };
    let h = 1e-4;
    let fd_a = (loss_f64(a0 + h, b0) - loss_f64(a0 - h, b0)) / (2.0 * h);
    let fd_b = (loss_f64(a0, b0 + h) - loss_f64(a0, b0 - h)) / (2.0 * h);
    assert!((ga - fd_a).abs() / fd_a.abs() <= 1e-4, "dL/da {ga} vs {fd_a}");
    assert!((gb - fd_b).abs() / fd_b.abs() <= 1e-4, "dL/db {gb} vs {fd_b}");
}

// ---------------------------------------------------------------------
// Criterion 3: adjacent-channel sampling frequency equals p_adj.
// ---------------------------------------------------------------------

#[test]
fn c03_conditioning_sampler_frequency() {
    let prev = SliceImage::constant(0.2, 2, 2);
    let next = SliceImage::constant(0.8, 2, 2);
    let n = 10_000;
    for &p_adj in &[0.0f64, 0.2, 0.5, 1.0] {
        let mut rng = contourdiff::rng::stream(SEED, &format!("acceptance/p-adj-{p_adj}"));
        let hits = (0..n)
            .filter(|_| sample_adjacent(Some(&prev), Some(&next), p_adj, &mut rng).is_some())
            .count();
        let freq = hits as f64 / n as f64;
        assert!(
            (freq - p_adj).abs() <= 0.01,
            "p_adj {p_adj}: observed frequency {freq}"
        );
    }
}

// ---------------------------------------------------------------------
// Criterion 4: translation is bit-identical across group counts.
// ---------------------------------------------------------------------

#[test]
fn c04_translate_determinism_across_group_counts() {
    let device = Device::Cpu;
    let h = heavy();
    let volumes = &h.dataset.input_train[..4];
    let run = |groups: usize| {
        translate_dataset(
            &h.translator.model,
            volumes,
            groups,
            &h.config,
            &h.translator.schedule,
            &device,
        )
        .unwrap()
    };
    let sequential = run(1);
    let parallel = run(4);
    assert!(sequential.failures.is_empty() && parallel.failures.is_empty());
    for (a, b) in sequential.volumes.iter().zip(&parallel.volumes) {
        assert_eq!(a.volume_id, b.volume_id);
        for (sa, sb) in a.slices.iter().zip(&b.slices) {
            assert_eq!(
                sa.pixels().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                sb.pixels().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                "volume {} differs between group counts",
                a.volume_id
            );
        }
    }
}

// ---------------------------------------------------------------------
// Criterion 5: end-to-end domain transfer ordering and edge fidelity.
// ---------------------------------------------------------------------

/// Samples drawn from the trained model with a blank contour and no
/// adjacent channel: the structure-unaware control.
fn unconditional_volumes(h: &Heavy, inputs: &[Volume], device: &Device) -> Vec<Volume> {
    inputs
        .iter()
        .map(|volume| {
            let mut rng =
                contourdiff::rng::stream(h.config.seed, &format!("uncond/{}", volume.volume_id));
            let slices: Vec<SliceImage> = volume
                .slices
                .iter()
                .map(|slice| {
                    let (height, width) = (slice.height(), slice.width());
                    let bundle = ConditioningBundle {
                        contour: ContourMap::new(
                            vec![false; height * width],
                            height,
                            width,
                            h.config.canny_low_output,
                            h.config.canny_high_output,
                        ),
                        adjacent: None,
                    };
                    let latent = gaussian_latent(height * width, &mut rng);
                    let out = ddim_sample_batch(
                        &h.translator.model,
                        std::slice::from_ref(&bundle),
                        vec![latent],
                        &h.translator.schedule,
                        h.config.ddim_steps,
                        device,
                    )
                    .unwrap();
                    to_slice_image(&out[0], height, width)
                })
                .collect();
            Volume::new(volume.volume_id.clone(), slices, Domain::Output)
        })
        .collect()
}

#[test]
fn c05_end_to_end_domain_transfer() {
    let device = Device::Cpu;
    let h = heavy();
    let translated_dsc = dsc(&h.report_translated);
    let no_adapt_dsc = dsc(&h.report_no_adapt);
    let ub_dsc = dsc(&h.report_ub);
    assert!(
        ub_dsc > translated_dsc,
        "upper bound {ub_dsc:.3} not above translated {translated_dsc:.3}"
    );
    assert!(
        translated_dsc >= no_adapt_dsc + 0.15,
        "translated {translated_dsc:.3} not >= no-adapt {no_adapt_dsc:.3} + 0.15"
    );

    // Edge fidelity: translated contours must track the input contours.
    let edge = edge_alignment_report(
        &h.dataset.input_train,
        &h.translated,
        &h.config,
        "edge-translated",
    )
    .unwrap();
    let edge_mean = edge.hd95.expect("edge HD95 defined").mean;
    assert!(edge_mean <= 5.0, "edge HD95 mean {edge_mean:.2} px > 5 px");

    // Structure-unaware control: unconditional samples from the same
    // model must align far worse with the input contours.
    let control_inputs = &h.dataset.input_train[..6];
    let control = unconditional_volumes(h, control_inputs, &device);
    let control_edge =
        edge_alignment_report(control_inputs, &control, &h.config, "edge-unconditional").unwrap();
    assert!(
        !control_edge.hd95_per_slice.is_empty(),
        "unconditional control produced no measurable contours: {:?}",
        control_edge.hd95_missing
    );
    let control_mean = control_edge.hd95.expect("control HD95 defined").mean;
    assert!(
        control_mean >= 3.0 * edge_mean,
        "control HD95 {control_mean:.2} px not >= 3x translated {edge_mean:.2} px"
    );
}

// ---------------------------------------------------------------------
// Criterion 6: adjacency conditioning helps accuracy and coherence.
// ---------------------------------------------------------------------

#[test]
fn c06_scgd_ablation() {
    let device = Device::Cpu;
    let h = heavy();
    let options = StageOptions {
        translation: TranslationOptions {
            adjacent_conditioning: false,
            candidate_rank: 0,
        },
        ..StageOptions::default()
    };
    let without = translate_with_options(
        &h.translator.model,
        &h.translator.schedule,
        &h.dataset.input_train,
        &h.config,
        &options,
        &device,
    )
    .unwrap();
    assert!(without.failures.is_empty());

    let (_, test) = heldout_split(&h.dataset);
    let (_, report_without) =
        seg_transfer(&without.volumes, test, &h.config, "scgd-off", &device).unwrap();
    let with_dsc = dsc(&h.report_translated);
    let without_dsc = dsc(&report_without);
    assert!(
        with_dsc >= without_dsc,
        "adjacency-conditioned DSC {with_dsc:.3} below unconditioned {without_dsc:.3}"
    );

    // Volume coherence: adjacent-slice differences strictly lower with
    // adjacency conditioning on at least 80% of volumes.
    let lower = h
        .translated
        .iter()
        .zip(&without.volumes)
        .filter(|(a, b)| adjacent_coherence(a) < adjacent_coherence(b))
        .count();
    let total = h.translated.len();
    assert!(
        lower * 5 >= total * 4,
        "coherence improved on only {lower}/{total} volumes"
    );
}

// ---------------------------------------------------------------------
// Criterion 7: lower adjacency probability is at least as good.
// ---------------------------------------------------------------------

#[test]
fn c07_p_adj_sweep() {
    let device = Device::Cpu;
    let h = heavy();
    let mut config_high = h.config.clone();
    config_high.p_adj = 1.0;
    let translator_high =
        train_translator(&h.dataset.output_train, &config_high, &device).unwrap();
    let high = translate_with_options(
        &translator_high.model,
        &translator_high.schedule,
        &h.dataset.input_train,
        &config_high,
        &StageOptions::default(),
        &device,
    )
    .unwrap();
    assert!(high.failures.is_empty());
    let (_, test) = heldout_split(&h.dataset);
    let (_, report_high) =
        seg_transfer(&high.volumes, test, &config_high, "p-adj-1.0", &device).unwrap();
    let low_dsc = dsc(&h.report_translated);
    let high_dsc = dsc(&report_high);
    assert!(
        low_dsc >= high_dsc,
        "p_adj 0.2 DSC {low_dsc:.3} below p_adj 1.0 DSC {high_dsc:.3}"
    );
}

// ---------------------------------------------------------------------
// Criterion 8: perturbation math is exact; noise hurts monotonically.
// ---------------------------------------------------------------------

#[test]
fn c08_robustness_protocols() {
    let device = Device::Cpu;

    // Noise power: with the generator stream replayed, the additive term
    // must be exactly sigma * z with sigma^2 = P_signal / 10^(snr/10).
    let mut rng = contourdiff::rng::stream(SEED, "acceptance/noise-power");
    let pixels: Vec<f32> = (0..256).map(|i| 0.2 + 0.6 * (i as f32 / 255.0)).collect();
    let slice = SliceImage::new(pixels.clone(), 16, 16, contourdiff::dataio::BitDepth::Eight);
    for snr_db in [30.0f64, 15.0] {
        let mut gen_rng = rng.clone();
        let noisy = add_noise_snr_unclamped(&slice, snr_db, &mut rng);
        let p_signal =
            pixels.iter().map(|&p| (p as f64).powi(2)).sum::<f64>() / pixels.len() as f64;
        let sigma = (p_signal / 10f64.powf(snr_db / 10.0)).sqrt() as f32;
        for (out, &clean) in noisy.iter().zip(&pixels) {
            let z: f32 = gen_rng.sample(StandardNormal);
            assert_eq!(*out, clean + sigma * z, "noise term differs from sigma*z");
        }
    }

    // Contrast transform: k = 1 is an identity to 1e-12.
    let identity = adjust_contrast_unclamped(&slice, 1.0);
    for (out, &clean) in identity.iter().zip(&pixels) {
        assert!((*out as f64 - clean as f64).abs() < 1e-12);
    }

    // Heavier noise degrades downstream accuracy at least as much.
    let h = heavy();
    let (_, test) = heldout_split(&h.dataset);
    let run_snr = |snr_db: f64, label: &str| -> f64 {
        let options = StageOptions {
            snr_db: Some(snr_db),
            ..StageOptions::default()
        };
        let translation = translate_with_options(
            &h.translator.model,
            &h.translator.schedule,
            &h.dataset.input_train,
            &h.config,
            &options,
            &device,
        )
        .unwrap();
        assert!(translation.failures.is_empty());
        let (_, report) = seg_transfer(&translation.volumes, test, &h.config, label, &device).unwrap();
        dsc(&report)
    };
    let clean_dsc = dsc(&h.report_translated);
    let snr30_dsc = run_snr(30.0, "snr-30");
    let snr15_dsc = run_snr(15.0, "snr-15");
    let deg30 = clean_dsc - snr30_dsc;
    let deg15 = clean_dsc - snr15_dsc;
    assert!(
        deg15 >= deg30,
        "SNR-15 degradation {deg15:.3} below SNR-30 degradation {deg30:.3}"
    );
}

// ---------------------------------------------------------------------
// Criterion 9: distributional metric identities.
// ---------------------------------------------------------------------

#[test]
fn c09_fid_kid_properties() {
    let mut rng = contourdiff::rng::stream(SEED, "acceptance/fid-kid");
    let dim = 8;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, mean: f64| -> FeatureSet {
        FeatureSet::new(
            (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| mean + rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect(),
            "acceptance",
        )
    };

    // Identity: fid of a set against itself is zero.
    let f = draw(&mut rng, 500, 0.0);
    assert!(fid(&f, &f).unwrap().abs() <= 1e-6);

    // Equal-covariance Gaussians: fid approaches ||mu1 - mu2||^2.
    let n = 10_000;
    let shift = 0.5;
    let f1 = draw(&mut rng, n, 0.0);
    let f2 = draw(&mut rng, n, shift);
    let expected = shift * shift * dim as f64;
    let value = fid(&f1, &f2).unwrap();
    assert!(
        (value - expected).abs() <= 0.05 * expected,
        "fid {value:.4} vs closed form {expected:.4}"
    );

    // Unbiasedness: kid over same-distribution pairs averages to zero.
    let kids: Vec<f64> = (0..200)
        .map(|_| {
            let a = draw(&mut rng, 64, 0.0);
            let b = draw(&mut rng, 64, 0.0);
            kid(&a, &b).unwrap()
        })
        .collect();
    let mean = kids.iter().sum::<f64>() / kids.len() as f64;
    let var = kids.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (kids.len() - 1) as f64;
    let se = (var / kids.len() as f64).sqrt();
    assert!(
        mean.abs() <= 2.0 * se,
        "kid mean {mean:.2e} outside 2 SE ({se:.2e}) of zero"
    );
}

// ---------------------------------------------------------------------
// Criterion 10: zero-shot transfer to a third appearance domain.
// ---------------------------------------------------------------------

#[test]
fn c10_zero_shot_third_domain() {
    let device = Device::Cpu;
    let h = heavy();
    let translation = translate_with_options(
        &h.translator.model,
        &h.translator.schedule,
        &h.dataset.zeroshot,
        &h.config,
        &StageOptions::default(),
        &device,
    )
    .unwrap();
    assert!(translation.failures.is_empty());

    let (_, test) = heldout_split(&h.dataset);
    let (_, report_translated) =
        seg_transfer(&translation.volumes, test, &h.config, "zero-shot", &device).unwrap();
    let (_, report_raw) =
        seg_transfer(&h.dataset.zeroshot, test, &h.config, "zero-shot-no-adapt", &device).unwrap();
    let translated_dsc = dsc(&report_translated);
    let raw_dsc = dsc(&report_raw);
    assert!(
        translated_dsc >= raw_dsc + 0.10,
        "zero-shot translated {translated_dsc:.3} not >= raw {raw_dsc:.3} + 0.10"
    );
}
