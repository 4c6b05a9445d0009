//! Pre-trains the trunk on a pooled corpus disjoint from the task stream,
//! then compares forgetting against a random start.

use flatbasin::methods::{train_sequence, warm_start, MethodConfig};
use flatbasin::metrics::{aggregate, SequenceMetrics};
use flatbasin::model::{Activation, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::RngStream;
use flatbasin::tasks::{gen_split_blobs, gen_warm_start_corpus, shuffle_sequences};

fn main() -> flatbasin::Result<()> {
    let cfg = MethodConfig { lr: 0.1, epochs: 20, ..MethodConfig::default() };
    let (mut random_runs, mut warm_runs) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let stream = gen_split_blobs(5, 2, 20, 200, 2.0, 1.0, seed)?;
        let corpus = gen_warm_start_corpus(&stream, seed)?;
        let spec = MlpSpec {
            input_dim: stream.dim(),
            hidden_dims: vec![16, 16],
            activation: Activation::Tanh,
            heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
        };
        for (q, seq) in shuffle_sequences(&stream, 2, seed)?.iter().enumerate() {
            let random = ModelState::init(
                spec.clone(),
                &mut RngStream::derive(seed, &format!("init/{q}")),
                InitScheme::UniformGlorot,
            )?;
            let mut warm = random.clone();
            let report = warm_start(&mut warm, &corpus, 20, 0.05, 10, &RngStream::derive(seed, &format!("warm/{q}")))?;
            println!("seed {seed} sequence {q}: corpus accuracy after warm start {:.3}", report.corpus_accuracy);
            for (mut model, runs) in [(random, &mut random_runs), (warm, &mut warm_runs)] {
                let log = train_sequence(&mut model, seq, &cfg, &RngStream::derive(seed, &format!("train/{q}")))?;
                runs.push(SequenceMetrics::from_scores(&log.scores)?);
            }
        }
    }
    for (name, runs) in [("random", &random_runs), ("warm", &warm_runs)] {
        let r = aggregate(runs)?;
        let f = r.final_forgetting.expect("five tasks");
        println!("{name:<6} accuracy {:.4}  forgetting {:.4} ± {:.4}", r.final_accuracy.mean, f.mean, f.std);
    }
    Ok(())
}
