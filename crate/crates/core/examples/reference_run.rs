//! Trains the baseline and ReliOcc networks on the default synthetic scenes,
//! fits every calibrator and prints the test-split metrics.
//!
//! Usage: `cargo run --example reference_run -- [seed] [epochs] [batch] [nocal]`
//! Omitted arguments follow the reference recipe. `SCENE_TOML` overrides the
//! scene config and `SHOW_BINS` prints the semantic reliability bins.

use std::time::Instant;

use occrel::calib::{apply_calibrator, fit_calibrator, CalibratorKind, FitConfig};
use occrel::metrics::{evaluate, evaluate_probs, EvalOptions, UncertaintySource};
use occrel::toynet::{generate_scenes, perturb, predict_dump, train, Mode, PerturbKind, SceneConfig, ToyNet, TrainConfig};

fn main() -> occrel::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let reference = TrainConfig::reference();
    let seed: u64 = args.get(1).map_or(reference.seed, |s| s.parse().expect("seed"));
    let epochs: usize = args.get(2).map_or(reference.epochs, |s| s.parse().expect("epochs"));
    let batch_size: usize = args.get(3).map_or(reference.batch_size, |s| s.parse().expect("batch"));
    let calibrate = args.get(4).is_none_or(|s| s != "nocal");
    let t0 = Instant::now();
    let config = match std::env::var("SCENE_TOML") {
        Ok(text) => SceneConfig::from_toml(&text)?,
        Err(_) => SceneConfig::default(),
    };
    let ds = generate_scenes(&config, seed)?;
    let opts = EvalOptions::default();
    for mode in [Mode::Baseline, Mode::ReliOcc] {
        let mut net = ToyNet::new(ds.config.feature_dim, ds.train.num_classes, seed);
        let cfg = TrainConfig {
            epochs,
            batch_size,
            seed,
            ..reference.clone()
        };
        let curve = train(&mut net, &ds.train, mode, &cfg)?;
        let test = predict_dump(&net, &ds.test, mode, seed)?;
        let val = predict_dump(&net, &ds.val, mode, seed)?;
        let r = evaluate(&test, UncertaintySource::OneMinusConfidence, &opts)?;
        println!(
            "{mode:8} loss {:.4}->{:.4} miou {:.4} iou {:.4} ece_sem {:.4} prr_sem {:?} ece_geo {:.4} prr_geo {:?} [{:.1}s]",
            curve[0].loss.total,
            curve.last().unwrap().loss.total,
            r.miou,
            r.iou,
            r.semantic.ece,
            r.semantic.prr,
            r.geometric.ece,
            r.geometric.prr,
            t0.elapsed().as_secs_f64()
        );
        if std::env::var_os("SHOW_BINS").is_some() {
            for b in r.semantic.diagram.iter().filter(|b| b.count > 0) {
                println!("         bin {:2} n {:6} conf {:.3} acc {:.3}", b.bin_index, b.count, b.mean_conf, b.mean_acc);
            }
        }
        if test.sigmas.is_some() {
            let s = evaluate(&test, UncertaintySource::ExplicitSigma, &opts)?;
            println!("         sigma-ranked prr_sem {:?} prr_geo {:?}", s.semantic.prr, s.geometric.prr);
        }
        for m in [0.5, 1.0] {
            let p = perturb(&test, PerturbKind::LogitNoise, m, seed)?;
            let rp = evaluate(&p, UncertaintySource::OneMinusConfidence, &opts)?;
            println!("         logit_noise {m}: ece_sem {:.4} (+{:.4})", rp.semantic.ece, rp.semantic.ece - r.semantic.ece);
        }
        if calibrate && mode == Mode::Baseline {
            for kind in CalibratorKind::ALL {
                let p = fit_calibrator(kind, &val, &FitConfig { seed, ..FitConfig::default() })?;
                let probs = apply_calibrator(&p, &test)?;
                let rc = evaluate_probs(&probs, &test.labels, test.num_classes, None, &opts)?;
                println!(
                    "         {kind:8} ece_sem {:.4} prr_sem {:?} miou {:.4} fit_nll {:.4} [{:.1}s]",
                    rc.semantic.ece,
                    rc.semantic.prr,
                    rc.miou,
                    p.fit_log.final_nll,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
    Ok(())
}
