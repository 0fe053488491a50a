//! Writes one line per font class to a PGM contact sheet.
//!
//! Usage: render_sheet [classes] [out.pgm] [clean|syn|real]
use fontid_core::augment::AugmentConfig;
use fontid_core::dataset::{render_pseudo_real, render_syn, PseudoRealConfig};
use fontid_core::glyphgen::{render_line, FontClass, RenderRequest};
use fontid_core::image::GrayImage;

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let out = args.next().unwrap_or_else(|| "sheet.pgm".into());
    let mode = args.next().unwrap_or_else(|| "clean".into());
    let lines: Vec<GrayImage> = (0..n)
        .map(|id| match mode.as_str() {
            "syn" => render_syn(id, id as u64, (6, 10), &AugmentConfig::full()).unwrap(),
            "real" => {
                render_pseudo_real(id, id as u64, (6, 10), &PseudoRealConfig::default()).unwrap()
            }
            _ => render_line(
                &RenderRequest::new("handgloves", FontClass::from_id(id), 10),
                id as u64,
            )
            .unwrap(),
        })
        .collect();
    let w = lines.iter().map(GrayImage::width).max().unwrap();
    let h: usize = lines.iter().map(GrayImage::height).sum();
    let mut px = vec![1.0; w * h];
    let mut y0 = 0;
    for l in &lines {
        for y in 0..l.height() {
            for x in 0..l.width() {
                px[(y0 + y) * w + x] = l.get(y, x);
            }
        }
        y0 += l.height();
    }
    GrayImage::new(h, w, px)
        .write_pgm(std::fs::File::create(out).unwrap())
        .unwrap();
}
