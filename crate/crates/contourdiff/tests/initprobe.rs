use candle_core::Device;
use contourdiff::dataio::{Domain, RunConfig, SliceImage};
use contourdiff::diffusion::train::{slice_contour, train_translator};
use contourdiff::diffusion::{save_checkpoint};
use contourdiff::phantom::{generate_phantom_dataset, PhantomSpec};
use contourdiff::pipeline::{edge_alignment_report, translate_with_options, StageOptions};

fn dump01(slice: &SliceImage, path: &str) {
    let (h, w) = (slice.height(), slice.width());
    let scale = 8usize;
    let mut img = image::GrayImage::new((w * scale) as u32, (h * scale) as u32);
    for r in 0..h * scale {
        for c in 0..w * scale {
            let v = slice.get(r / scale, c / scale).clamp(0.0, 1.0);
            img.put_pixel(c as u32, r as u32, image::Luma([(v * 255.0) as u8]));
        }
    }
    img.save(path).unwrap();
}

#[test]
fn weight_growth() {
    let device = Device::Cpu;
    let mut config = RunConfig::desk_scale();
    config.resolution = 32;
    config.seed = 7;
    config.width_factor = 0.125;
    config.t_steps = 300;
    config.beta_max = 0.04;
    config.train_steps = 2000;
    config.batch_size = 8;
    config.lr = 1e-3;
    let spec = PhantomSpec {
        n_volumes: 20, n_test_volumes: 6, n_zeroshot_volumes: 8,
        slices_per_volume: 8, resolution: 32, seed: 7,
        ..PhantomSpec::default()
    };
    let dataset = generate_phantom_dataset(&spec).unwrap();
    dump01(&dataset.output_train[0].slices[4], "/tmp/probe_imgs/real_out.png");
    dump01(&dataset.input_train[0].slices[4], "/tmp/probe_imgs/real_in.png");

    let trained = train_translator(&dataset.output_train, &config, &device).unwrap();
    save_checkpoint(std::path::Path::new("/tmp/probe_w4k.ckpt"), &trained.varmap, &trained.meta).unwrap();

    // x0-hat MSE diagnostics at several t on a training item
    let item = &dataset.output_train[0].slices[4];
    let x0: Vec<f32> = item.pixels().iter().map(|&p| 2.0 * p - 1.0).collect();
    let contour = slice_contour(item, Domain::Output, &config);
    let mut rng = contourdiff::rng::stream(3, "diag");
    for &t in &[30usize, 100, 200, 300] {
        use contourdiff::diffusion::forward_noise;
        use rand::Rng;
        let eps: Vec<f32> = (0..x0.len()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let x_t = forward_noise(&x0, t, &eps, &trained.schedule).unwrap();
        let bundle = contourdiff::diffusion::ConditioningBundle { contour: contour.clone(), adjacent: None };
        let cond = candle_core::Tensor::from_vec(bundle.encode(), (1, 2, 32, 32), &device).unwrap();
        let xt = candle_core::Tensor::from_vec(x_t.clone(), (1, 1, 32, 32), &device).unwrap();
        use contourdiff::diffusion::unet::Denoiser;
        let pred = trained.model.predict(&xt, &[t], &cond).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let ab = trained.schedule.alpha_bar(t);
        let mse: f64 = x_t.iter().zip(&pred).zip(&x0)
            .map(|((&xt, &e), &x0v)| {
                let x0h = (xt - (1.0 - ab).sqrt() as f32 * e) / ab.sqrt() as f32;
                ((x0h - x0v) as f64).powi(2)
            }).sum::<f64>() / x0.len() as f64;
        println!("t={t} x0hat mse {mse:.4}");
    }

    // Translate first two input volumes, dump slices, edge HD95
    let inputs = &dataset.input_train[..2];
    let translation = translate_with_options(
        &trained.model, &trained.schedule, inputs, &config, &StageOptions::default(), &device,
    ).unwrap();
    assert!(translation.failures.is_empty(), "{:?}", translation.failures);
    for (vi, vol) in translation.volumes.iter().enumerate() {
        for si in [0usize, 4] {
            dump01(&vol.slices[si], &format!("/tmp/probe_imgs/w125_v{vi}_s{si}.png"));
        }
    }
    let report = edge_alignment_report(inputs, &translation.volumes, &config, "probe").unwrap();
    println!("edge hd95 {:?} missing {}", report.hd95, report.hd95_missing.len());
}
