use ndarray::{Array2, Axis};
use rand::Rng as _;

use riemcf::config::{DatasetKind, RunConfig};
use riemcf::counterfactual::CeOptimizer;
use riemcf::models::{fit_decoder_variance, train_vae_warmup};
use riemcf::pipeline::{self, prepare_data};
use riemcf::rng::seeded;

fn small(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::for_dataset(DatasetKind::Surface);
    cfg.out = out.to_path_buf();
    cfg.surface_samples = 1000;
    cfg.classifier_epochs = 10;
    cfg.vae_epochs = 30;
    cfg.rbf_epochs = 20;
    cfg.rbf_centers = 24;
    cfg.ce_iterations = vec![10, 20];
    cfg.ce_alphas = vec![0.0, 0.5];
    cfg.ce_max_factuals = 15;
    cfg
}

#[test]
fn variance_fit_freezes_the_warm_model_and_calibrates_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let data = prepare_data(&cfg, 0).unwrap();
    let (warm, _) = train_vae_warmup(&data.train, &cfg.vae_config(0)).unwrap();
    let (vae, log) = fit_decoder_variance(&warm, &data.train, &cfg.rbf_config(0).unwrap()).unwrap();
    assert_eq!(vae.encoder, warm.encoder);
    assert_eq!(vae.encoder_mean, warm.encoder_mean);
    assert_eq!(vae.encoder_var, warm.encoder_var);
    assert_eq!(vae.decoder, warm.decoder);
    assert!(log.iter().all(|e| e.nll.is_finite()));

    let latent = vae.encode_batch(data.train.x.view()).unwrap();
    let mean_sigma = |codes: &Array2<f64>| {
        codes.rows().into_iter().map(|z| vae.decoder_sigma(z).unwrap().mean().unwrap()).sum::<f64>() / codes.nrows() as f64
    };
    let lo = latent.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
    let hi = latent.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
    let mid = (&lo + &hi) / 2.0;
    let half = (&hi - &lo) * 1.5;
    let mut rng = seeded(1);
    let boxed = Array2::from_shape_fn((2000, 2), |(_, j)| mid[j] + half[j] * rng.random_range(-1.0..1.0));
    let on = mean_sigma(&latent);
    let off = mean_sigma(&boxed);
    assert!(off >= 5.0 * on, "sigma on data {on}, in the 3x box {off}");

    let rbf = vae.variance.as_ref().unwrap();
    for z in boxed.rows() {
        assert!(rbf.gamma(z).unwrap().iter().all(|&g| g >= rbf.zeta));
    }
}

#[test]
fn two_seed_run_reports_per_seed_and_pooled_rows_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.seeds = vec![0, 1];
    let rows = pipeline::run_all(&cfg).unwrap();
    // 2 budgets x 2 constraint settings x 3 optimizers, each with 2 seeds + pooled
    assert_eq!(rows.len(), 2 * 2 * 3 * 3);
    assert_eq!(rows.iter().filter(|r| r.seed.is_none()).count(), 12);
    for r in &rows {
        assert!(r.summary.flip_ratio >= 0.0 && r.summary.flip_ratio <= 1.0);
    }
    for seed in [0, 1] {
        for opt in CeOptimizer::ALL {
            for it in [10, 20] {
                for alpha in [0.0, 0.5] {
                    assert!(pipeline::trajectory_file(&cfg.seed_dir(seed), opt, it, alpha).exists());
                }
            }
        }
    }

    let (vae, clf) = pipeline::load_models(&cfg, 0).unwrap();
    let data = prepare_data(&cfg, 0).unwrap();
    let idx = pipeline::select_factuals(&cfg, 0, &clf, &data.test).unwrap();
    let again = pipeline::run_generate(&cfg, 0, &vae, &clf, &data.test.x.select(Axis(0), &idx)).unwrap();
    assert_eq!(again.groups, 0);
}

#[test]
fn evaluation_refuses_trajectories_from_another_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.ce_iterations = vec![5];
    cfg.ce_alphas = vec![0.0];
    pipeline::run_all(&cfg).unwrap();
    let path = pipeline::trajectory_file(&cfg.seed_dir(0), CeOptimizer::Sgd, 5, 0.0);
    let mut trajs = riemcf::counterfactual::read_jsonl(&path).unwrap();
    trajs[0].factual.push(0.0);
    riemcf::counterfactual::write_jsonl(&path, &trajs).unwrap();
    assert!(matches!(pipeline::run_evaluate(&cfg), Err(riemcf::Error::Config(_))));
}

#[test]
fn hole_codes_exist_for_a_trained_surface_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let data = prepare_data(&cfg, 0).unwrap();
    let norm = data.normalizer().unwrap();
    let (warm, _) = train_vae_warmup(&data.train, &cfg.vae_config(0)).unwrap();
    let codes = pipeline::hole_latent_codes(&cfg, 0, &warm, &norm, 10, 0.8).unwrap();
    assert!(codes.nrows() > 0);
    assert_eq!(codes.ncols(), 2);
}
