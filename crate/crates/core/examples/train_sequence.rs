//! Trains one multi-head MLP through a split-blobs stream with every
//! continual-learning method and prints the final metrics.

use flatbasin::methods::{train_sequence, Method, MethodConfig};
use flatbasin::metrics::SequenceMetrics;
use flatbasin::model::{Activation, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::RngStream;
use flatbasin::tasks::gen_split_blobs;

fn main() -> flatbasin::Result<()> {
    let stream = gen_split_blobs(5, 2, 20, 200, 2.0, 1.0, 0)?;
    let spec = MlpSpec {
        input_dim: stream.dim(),
        hidden_dims: vec![16, 16],
        activation: Activation::Tanh,
        heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
    };
    let start = ModelState::init(spec, &mut RngStream::derive(0, "init"), InitScheme::UniformGlorot)?;

    println!("{:<11} {:>8} {:>10} {:>8} {:>7}", "method", "A_T", "F_T", "LA_T", "memory");
    for method in [Method::Finetune, Method::Ewc, Method::Er, Method::Agem, Method::StableSgd] {
        let cfg = MethodConfig { lr: 0.1, epochs: 5, ..MethodConfig::new(method) };
        let mut model = start.clone();
        let log = train_sequence(&mut model, &stream, &cfg, &RngStream::derive(0, "train"))?;
        let m = SequenceMetrics::from_scores(&log.scores)?;
        let t = m.tasks() - 1;
        println!(
            "{:<11} {:>8.4} {:>10.4} {:>8.4} {:>7}",
            cfg.label(),
            m.accuracy[t],
            m.forgetting[t].unwrap_or(0.0),
            m.learning_accuracy[t],
            log.buffer_size
        );
    }
    Ok(())
}
