//! Loss of the first task on the plane through the minima of tasks 1–3,
//! written as plot-ready CSV.

use flatbasin::landscape::{build_plane, contour_grid};
use flatbasin::methods::{train_sequence, MethodConfig};
use flatbasin::model::{Activation, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::RngStream;
use flatbasin::tasks::gen_split_blobs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "contour.csv".into());
    let stream = gen_split_blobs(3, 2, 10, 100, 2.0, 1.0, 4)?;
    let spec = MlpSpec {
        input_dim: stream.dim(),
        hidden_dims: vec![16],
        activation: Activation::Tanh,
        heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
    };
    let mut model = ModelState::init(spec, &mut RngStream::derive(4, "init"), InitScheme::UniformGlorot)?;
    let cfg = MethodConfig { lr: 0.1, epochs: 10, ..MethodConfig::default() };
    let log = train_sequence(&mut model, &stream, &cfg, &RngStream::derive(4, "train"))?;

    let first = &stream.tasks[0];
    let w = &log.snapshots;
    let plane = build_plane(&w[0], &w[1], &w[2])?;
    let grid = contour_grid(&plane, |p| model.loss_at(p, &first.test, first.task), 25, 0.25)?;
    for (k, ((a, b), loss)) in plane.anchor_coords.iter().zip(&grid.anchor_losses).enumerate() {
        println!("w{} at ({a:.3}, {b:.3}): task-1 loss {loss:.4}", k + 1);
    }
    std::fs::write(&out, grid.to_csv())?;
    println!("{}×{} grid written to {out}", grid.resolution(), grid.resolution());
    Ok(())
}
