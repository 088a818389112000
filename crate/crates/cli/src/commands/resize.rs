use std::path::PathBuf;

use clap::Args;
use osteokit_core::vit_resize::{plan_resize, resize_bundle, ResizeRequest, WeightBundle};
use osteokit_core::{Error, Result};

use crate::Context;

#[derive(Debug, Args)]
pub struct ResizeArgs {
    /// Bundle directory holding index.json and one NPY file per tensor.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// New position-embedding grid.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    grid: Option<Vec<usize>>,
    /// New patch size.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long, default_value = "pos_embed")]
    pos_name: String,
    #[arg(long, default_value = "patch_embed.weight")]
    patch_name: String,
}

pub fn resize(ctx: &mut Context, a: ResizeArgs) -> Result<()> {
    if a.grid.is_none() && a.patch.is_none() {
        return Err(Error::InvalidInput("nothing to do: give --grid and/or --patch".into()));
    }
    if a.input == a.output {
        return Err(Error::InvalidInput("--output must differ from --input".into()));
    }
    let bundle = WeightBundle::open(&a.input)?;
    let req = ResizeRequest {
        pos_embed: a.pos_name,
        patch_embed: a.patch_name,
        grid: a.grid.map(|g| (g[0], g[1])),
        patch: a.patch,
    };
    let actions = if ctx.sink.is_dry_run() {
        plan_resize(&bundle, &req)?.1
    } else {
        resize_bundle(&bundle, &req, &a.output)?
    };
    for act in &actions {
        println!("{}: {:?} -> {:?}", act.tensor, act.from, act.to);
    }
    if ctx.sink.is_dry_run() {
        println!("would write {}", a.output.display());
    }
    Ok(())
}
