//! Static HTML page of a query and its ranked neighbors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cbp_core::retrieval::Neighbor;
use cbp_core::{Error, Result, Tensor};
use image::RgbImage;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn save_png(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = match img.shape() {
        [h, w, 3] => (*h, *w),
        s => return Err(Error::Data(format!("expected an RGB image, got shape {s:?}"))),
    };
    let bytes: Vec<u8> = img.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf = RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches shape");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Writes `page` plus PNG copies of the images into `<page stem>_files/`.
pub fn write_gallery(page: &Path, query_path: &Path, query: &Tensor, hits: &[(Neighbor, Tensor)]) -> Result<()> {
    let stem = page.file_stem().and_then(|s| s.to_str()).unwrap_or("gallery");
    let assets = format!("{stem}_files");
    let dir = page.parent().unwrap_or(Path::new(".")).join(&assets);
    fs::create_dir_all(&dir)?;
    save_png(&dir.join("query.png"), query)?;

    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>cbp query</title>\n");
    html.push_str("<style>body{font-family:sans-serif} figure{display:inline-block;margin:6px;text-align:center} img{width:128px;image-rendering:pixelated}</style>\n");
    html.push_str("</head><body>\n");
    let _ = writeln!(
        html,
        "<h2>Query</h2>\n<figure><img src=\"{assets}/query.png\"><figcaption>{}</figcaption></figure>",
        escape(&query_path.display().to_string())
    );
    html.push_str("<h2>Nearest gallery images</h2>\n");
    for (rank, (n, img)) in hits.iter().enumerate() {
        let file = format!("{:03}.png", rank + 1);
        save_png(&dir.join(&file), img)?;
        let _ = writeln!(
            html,
            "<figure><img src=\"{assets}/{file}\"><figcaption>#{} {}<br>item {}<br>d = {:.4}</figcaption></figure>",
            rank + 1,
            escape(&n.image_id),
            escape(&n.item_id),
            n.distance
        );
    }
    html.push_str("</body></html>\n");
    fs::write(page, html)?;
    Ok(())
}
