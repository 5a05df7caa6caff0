//! Builds every stand-in A/B pair from one synthetic base and writes, per
//! style, the two manifests plus a PNG with a row of A images above a row of
//! B images.
//!
//! ```text
//! cargo run --release --example prepare_data -- out_dir [image_size]
//! ```

use std::path::PathBuf;

use distmorph::data::{load_dataset, make_stand_in_pair, write_manifest, DatasetSpec, StandInStyle};
use distmorph::grid::{render_rows, save_png};

fn main() -> distmorph::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "stand-ins".into()));
    let size: usize = args.next().map_or(32, |s| s.parse().expect("image_size is 16, 32 or 64"));
    let base = DatasetSpec::synthetic_shapes("shapes", size, 3, 0);

    for style in [StandInStyle::Recolor, StandInStyle::Texture, StandInStyle::Invert] {
        let (spec_a, spec_b) = make_stand_in_pair(style, &base)?;
        let a = load_dataset(&spec_a)?;
        let b = load_dataset(&spec_b)?;
        let dir = out.join(format!("{style:?}").to_lowercase());
        write_manifest(&a, &dir.join("a.json"))?;
        write_manifest(&b, &dir.join("b.json"))?;
        let row = |ds: &distmorph::data::Dataset| ds.batches(8, 0, 0).next().expect("non-empty").map(|bt| bt.images);
        save_png(&render_rows(&[row(&a)?, row(&b)?], 3)?, &dir.join("preview.png"))?;
        println!("{:<8} {} ({}) / {} ({}) -> {}", format!("{style:?}"), a.id(), a.len(), b.id(), b.len(), dir.display());
    }
    Ok(())
}
