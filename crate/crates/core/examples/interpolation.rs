//! Loss of task 1 along the straight line from its minimum to the
//! minimum reached after task 2, with and without a warm-started trunk.

use flatbasin::landscape::interpolate;
use flatbasin::methods::{train_sequence, warm_start, MethodConfig};
use flatbasin::model::{Activation, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::RngStream;
use flatbasin::tasks::{gen_split_blobs, gen_warm_start_corpus};

fn main() -> flatbasin::Result<()> {
    let stream = gen_split_blobs(2, 2, 20, 200, 2.0, 1.0, 2)?;
    let spec = MlpSpec {
        input_dim: stream.dim(),
        hidden_dims: vec![16, 16],
        activation: Activation::Tanh,
        heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
    };
    let random = ModelState::init(spec, &mut RngStream::derive(2, "init"), InitScheme::UniformGlorot)?;
    let mut warm = random.clone();
    let corpus = gen_warm_start_corpus(&stream, 2)?;
    warm_start(&mut warm, &corpus, 20, 0.05, 10, &RngStream::derive(2, "warm"))?;

    let cfg = MethodConfig { lr: 0.1, epochs: 20, ..MethodConfig::default() };
    let first = &stream.tasks[0];
    for (name, start) in [("random", random), ("warm", warm)] {
        let mut model = start;
        let log = train_sequence(&mut model, &stream, &cfg, &RngStream::derive(2, "train"))?;
        let curve =
            interpolate(&log.snapshots[0], &log.snapshots[1], 11, |w| model.loss_at(w, &first.test, first.task))?;
        let losses: Vec<String> = curve.iter().map(|(_, l)| format!("{l:.3}")).collect();
        println!("{name:<6} {}", losses.join(" "));
    }
    Ok(())
}
