//! Loads a task stream from a CSV file with `task` and `label` columns and
//! trains experience replay on it.

use std::fmt::Write;

use flatbasin::methods::{train_sequence, Method, MethodConfig};
use flatbasin::metrics::SequenceMetrics;
use flatbasin::model::{Activation, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::RngStream;
use flatbasin::tasks::{load_csv, CsvSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::temp_dir().join("flatbasin_stream.csv");
    let mut rng = RngStream::new(3);
    let mut text = String::from("x0,x1,x2,task,label\n");
    for task in 0..3 {
        for i in 0..120 {
            let label = i % 2;
            let centre = if label == 0 { -1.0 } else { 1.0 };
            let x: Vec<f64> = (0..3).map(|d| centre * if d == task { 2.0 } else { 0.2 } + rng.normal()).collect();
            writeln!(text, "{},{},{},{task},{label}", x[0], x[1], x[2]).unwrap();
        }
    }
    std::fs::write(&path, text)?;

    let schema = CsvSchema { label: "label".into(), task: Some("task".into()), ..CsvSchema::default() };
    let stream = load_csv(&path, &schema, 3)?;
    for t in &stream.tasks {
        println!(
            "task {}: {} train / {} validation / {} test",
            t.task,
            t.train.len(),
            t.validation.len(),
            t.test.len()
        );
    }
    let spec = MlpSpec {
        input_dim: stream.dim(),
        hidden_dims: vec![8],
        activation: Activation::Relu,
        heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
    };
    let mut model = ModelState::init(spec, &mut RngStream::new(3), InitScheme::UniformGlorot)?;
    let cfg = MethodConfig { lr: 0.1, epochs: 5, ..MethodConfig::new(Method::Er) };
    let log = train_sequence(&mut model, &stream, &cfg, &RngStream::new(4))?;
    let m = SequenceMetrics::from_scores(&log.scores)?;
    println!("ER: final accuracy {:.3}, memory {} examples", m.accuracy[m.tasks() - 1], log.buffer_size);
    Ok(())
}
