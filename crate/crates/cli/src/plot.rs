//! PNG output: SR bar charts and raw sensor channel dumps.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use navfuse::benchmark::SuiteReport;
use navfuse::{Error, Result};

type Canvas = RgbImage;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([215, 215, 215]);
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// 3x5 glyphs, one row per entry, most significant of 3 bits on the left.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 3, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '-' => [0, 0, 7, 0, 0],
        '_' => [0, 0, 0, 0, 7],
        '.' => [0, 0, 0, 0, 2],
        '/' => [1, 1, 2, 4, 4],
        '%' => [5, 1, 2, 4, 5],
        ':' => [0, 2, 0, 2, 0],
        _ => [0; 5],
    }
}

fn put(img: &mut Canvas, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill(img: &mut Canvas, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
    for y in y0..y1 {
        for x in x0..x1 {
            put(img, x, y, c);
        }
    }
}

/// Draws `text` with its top-left corner at (x, y); `s` is the pixel size.
fn text(img: &mut Canvas, x: i64, y: i64, s: i64, t: &str, c: Rgb<u8>) {
    for (i, ch) in t.chars().enumerate() {
        let g = glyph(ch);
        let ox = x + i as i64 * 4 * s;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    fill(img, ox + col * s, y + row as i64 * s, ox + (col + 1) * s, y + (row as i64 + 1) * s, c);
                }
            }
        }
    }
}

fn text_width(t: &str, s: i64) -> i64 {
    t.chars().count() as i64 * 4 * s - s
}

fn save(img: &Canvas, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageOutputFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    navfuse::io::write_atomic(path, &bytes)
}

/// Grouped bar chart: one group per label, one bar per series, values in
/// [0, 100].
pub fn bar_chart(title: &str, labels: &[String], series: &[(String, Vec<f64>)]) -> Canvas {
    let (bar, gap, s) = (14i64, 18i64, 2i64);
    let n = series.len().max(1) as i64;
    let group = n * bar + gap;
    let (left, top, plot_h) = (50i64, 40i64, 200i64);
    let label_h = 6 * labels.iter().map(|l| l.chars().count() as i64).max().unwrap_or(0);
    let legend_h = series.len() as i64 * 14 + 10;
    let width = (left + labels.len().max(1) as i64 * group + 20).max(text_width(title, s) + 40).max(260);
    let height = top + plot_h + label_h + 20 + legend_h;
    let mut img: Canvas = ImageBuffer::from_pixel(width as u32, height as u32, WHITE);
    text(&mut img, 20, 12, s, title, BLACK);
    let y_of = |v: f64| top + plot_h - (v.clamp(0.0, 100.0) / 100.0 * plot_h as f64).round() as i64;
    for tick in (0..=100).step_by(25) {
        let y = y_of(tick as f64);
        fill(&mut img, left, y, width - 10, y + 1, GRID);
        let t = tick.to_string();
        text(&mut img, left - 6 - text_width(&t, 1), y - 2, 1, &t, BLACK);
    }
    for (gi, label) in labels.iter().enumerate() {
        let x0 = left + gi as i64 * group + gap / 2;
        for (si, (_, values)) in series.iter().enumerate() {
            let c = Rgb(PALETTE[si % PALETTE.len()]);
            let v = values.get(gi).copied().unwrap_or(f64::NAN);
            if v.is_finite() {
                let x = x0 + si as i64 * bar;
                fill(&mut img, x, y_of(v), x + bar - 2, top + plot_h, c);
            }
        }
        // vertical label, one glyph per line
        let cx = x0 + (n * bar) / 2 - 1;
        for (k, ch) in label.chars().enumerate() {
            text(&mut img, cx, top + plot_h + 6 + k as i64 * 6, 1, &ch.to_string(), BLACK);
        }
    }
    fill(&mut img, left, top + plot_h, width - 10, top + plot_h + 1, BLACK);
    fill(&mut img, left, top, left + 1, top + plot_h + 1, BLACK);
    let ly = top + plot_h + label_h + 14;
    for (si, (name, _)) in series.iter().enumerate() {
        let y = ly + si as i64 * 14;
        fill(&mut img, left, y, left + 10, y + 10, Rgb(PALETTE[si % PALETTE.len()]));
        text(&mut img, left + 16, y, s, name, BLACK);
    }
    img
}

/// One SR-by-condition chart per (map, density), named
/// `<id>-<hash>-sr-<map>-<density>.png`.
pub fn write_plots(report: &SuiteReport, out: &Path) -> Result<Vec<PathBuf>> {
    let tasks = &report.metrics.tasks;
    let groups: BTreeSet<(String, String)> = tasks.iter().map(|t| (t.map.clone(), t.density.to_string())).collect();
    let mut policies: Vec<String> = Vec::new();
    for t in tasks {
        if !policies.contains(&t.policy) {
            policies.push(t.policy.clone());
        }
    }
    let mut files = Vec::new();
    for (map, density) in groups {
        let cell: Vec<_> = tasks.iter().filter(|t| t.map == map && t.density.to_string() == density).collect();
        let conditions: BTreeSet<String> = cell.iter().map(|t| t.condition.to_string()).collect();
        let labels: Vec<String> = conditions.into_iter().collect();
        let series: Vec<(String, Vec<f64>)> = policies
            .iter()
            .map(|p| {
                let v = labels
                    .iter()
                    .map(|l| cell.iter().find(|t| &t.policy == p && &t.condition.to_string() == l).map_or(f64::NAN, |t| t.sr))
                    .collect();
                (p.clone(), v)
            })
            .collect();
        let title = format!("SR % {map} {density}");
        let path = out.join(format!("{}-{}-sr-{map}-{density}.png", report.id, report.config_hash));
        save(&bar_chart(&title, &labels, &series), &path)?;
        files.push(path);
    }
    Ok(files)
}

fn upscale(img: Canvas, scale: u32) -> Canvas {
    let scale = scale.max(1);
    image::imageops::resize(&img, img.width() * scale, img.height() * scale, image::imageops::FilterType::Nearest)
}

/// Interleaved RGB values in [0, 1].
pub fn save_rgb(data: &[f32], h: usize, w: usize, scale: u32, path: &Path) -> Result<()> {
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = (y as usize * w + x as usize) * 3;
        Rgb(std::array::from_fn(|c| (data[i + c].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    save(&upscale(img, scale), path)
}

/// One channel, scaled so the largest magnitude maps to white.
pub fn save_gray(data: &[f32], h: usize, w: usize, scale: u32, path: &Path) -> Result<()> {
    let peak = data.iter().fold(0f32, |m, v| m.max(v.abs()));
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = data[y as usize * w + x as usize].abs();
        let g = if peak > 0.0 { (v / peak * 255.0).round() as u8 } else { 0 };
        Rgb([g, g, g])
    });
    save(&upscale(img, scale), path)
}
