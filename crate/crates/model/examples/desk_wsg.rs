//! Train on synthetic scenes with the mock backend and report held-out
//! accuracy for every inference mode.
//!
//! cargo run -p wwbl-model --example desk_wsg -- [key=value ...]
//! keys: lr batch epochs input width seed data_seed l3 repeat train test

use wwbl_core::ExtractionConfig;
use wwbl_model::desk::{eval_wsg, eval_wwbl, DeskExperiment};

fn parse<T: std::str::FromStr>(k: &str, v: &str) -> T {
    v.parse().unwrap_or_else(|_| panic!("bad value for {k}: {v}"))
}

fn main() -> wwbl_model::Result<()> {
    let mut exp = DeskExperiment::default();
    let mut seed = 0;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        match k {
            "lr" => exp.train.lr = parse(k, v),
            "batch" => exp.train.batch_size = parse(k, v),
            "epochs" => exp.train.epochs = parse(k, v),
            "input" => exp.train.wsg_input = parse(k, v),
            "width" => exp.width = parse(k, v),
            "seed" => seed = parse(k, v),
            "data_seed" => exp.data_seed = parse(k, v),
            "l3" => exp.weights.lambda3 = parse(k, v),
            "repeat" => exp.scene.repeat_color_prob = parse(k, v),
            "train" => exp.train_scenes = parse(k, v),
            "test" => exp.test_scenes = parse(k, v),
            _ => panic!("unknown key {k}"),
        }
    }
    let out = exp.train(seed, |c| {
        let l = c.history.last().expect("one epoch").loss;
        eprintln!(
            "epoch {:>3} total {:+.4} fore {:+.4} back {:+.4} rmap {:.4} reg {:.4}",
            c.epoch, l.total, l.fore, l.back, l.rmap, l.reg
        );
    })?;
    println!(
        "train {:.1?} final loss {:.6}",
        out.train_time,
        out.checkpoint.final_loss().unwrap_or(f64::NAN)
    );
    let backend = exp.backend()?;
    let test = exp.test_set()?;
    let r = eval_wsg(&test, &out.net, &backend, &ExtractionConfig::default())?;
    println!(
        "wsg       point {:.3} box {:.3} over {}",
        r.pointing_accuracy.unwrap_or(0.0),
        r.box_accuracy,
        r.total
    );
    let (ss, it) = eval_wwbl(&test, &out.net, &backend, &exp.wwbl)?;
    for (name, r) in [("wwbl-ss", ss), ("wwbl-iter", it)] {
        println!(
            "{name:<9} point {:.3} box {:.3} over {}",
            r.pointing_accuracy.unwrap_or(0.0),
            r.box_accuracy,
            r.total
        );
    }
    Ok(())
}
