//! Self-contained SVG figures. Output depends only on the inputs, with all
//! coordinates printed at fixed precision, so re-plotting is byte-identical.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};

use crate::datasets::coefficient_slot;
use crate::error::{Error, Result};
use crate::rng::Seeds;
use crate::spectral::{uniform_grid, BasisSpec};

const AXIS_LIMIT: f64 = 1.2;
const SOURCE_COLOR: &str = "#1f77b4";
const TARGET_COLOR: &str = "#ff7f0e";
const MAPPED_COLOR: &str = "#2ca02c";
const SEGMENT_COLOR: &str = "#999999";

struct Frame {
    left: f64,
    top: f64,
    size: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.left + (v + AXIS_LIMIT) / (2.0 * AXIS_LIMIT) * self.size
    }

    fn y(&self, v: f64) -> f64 {
        self.top + (AXIS_LIMIT - v) / (2.0 * AXIS_LIMIT) * self.size
    }
}

fn check_nonempty(name: &str, a: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() == 0 {
        return Err(Error::invalid(format!("cannot plot an empty {name} batch")));
    }
    Ok(())
}

fn axes(svg: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        svg,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000" stroke-width="1"/>"##,
        f.left, f.top, f.size, f.size
    );
    for i in 0..=4 {
        let v = -1.0 + 0.5 * i as f64;
        let (px, py) = (f.x(v), f.y(v));
        let bottom = f.top + f.size;
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#000"/><text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{v:.1}</text>"##,
            bottom,
            bottom + 5.0,
            bottom + 18.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.1}</text>"##,
            f.left - 5.0,
            f.left,
            f.left - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ccc" stroke-dasharray="3,3"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ccc" stroke-dasharray="3,3"/>"##,
        f.x(0.0),
        f.top,
        f.x(0.0),
        f.top + f.size,
        f.left,
        f.y(0.0),
        f.left + f.size,
        f.y(0.0)
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{xlabel}</text><text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{ylabel}</text>"##,
        f.left + f.size / 2.0,
        f.top + f.size + 36.0,
        f.left - 38.0,
        f.top + f.size / 2.0,
        f.left - 38.0,
        f.top + f.size / 2.0
    );
}

/// Scatter of source, target and transported samples in the plane of the
/// two dataset coefficients, with a segment from each source point to its
/// image. Points outside the fixed window are clipped.
pub fn coefficient_plane_svg(
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    transported: ArrayView2<'_, f64>,
    seeds: &Seeds,
    title: &str,
) -> Result<String> {
    check_nonempty("source", source)?;
    check_nonempty("target", target)?;
    check_nonempty("transported", transported)?;
    if source.dim() != transported.dim() || source.ncols() != target.ncols() {
        return Err(Error::shape("coefficient_plane_svg", source.shape(), transported.shape()));
    }
    let (c1, c2) = (coefficient_slot(1), coefficient_slot(2));
    if source.ncols() <= c2 {
        return Err(Error::invalid("batches do not contain both dataset coefficients"));
    }
    let f = Frame {
        left: 70.0,
        top: 50.0,
        size: 460.0,
    };
    let clip = |v: f64| v.clamp(-AXIS_LIMIT, AXIS_LIMIT);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="720" height="580" viewBox="0 0 720 580">"##
    );
    let _ = writeln!(svg, r##"<rect width="720" height="580" fill="#fff"/>"##);
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="28" font-size="15" text-anchor="middle">{}</text>"##,
        f.left + f.size / 2.0,
        escape(title)
    );
    axes(&mut svg, &f, "c1 (sin(pi t))", "c2 (sin(2 pi t))");

    let _ = writeln!(svg, r##"<g stroke="{SEGMENT_COLOR}" stroke-width="0.5" opacity="0.6">"##);
    for (s, t) in source.rows().into_iter().zip(transported.rows()) {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"##,
            f.x(clip(s[c1])),
            f.y(clip(s[c2])),
            f.x(clip(t[c1])),
            f.y(clip(t[c2]))
        );
    }
    let _ = writeln!(svg, "</g>");
    for (batch, color) in [(source, SOURCE_COLOR), (target, TARGET_COLOR), (transported, MAPPED_COLOR)] {
        let _ = writeln!(svg, r##"<g fill="{color}" opacity="0.75">"##);
        for r in batch.rows() {
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2"/>"##,
                f.x(clip(r[c1])),
                f.y(clip(r[c2]))
            );
        }
        let _ = writeln!(svg, "</g>");
    }

    let lx = f.left + f.size + 25.0;
    for (i, (label, color)) in [
        ("source", SOURCE_COLOR),
        ("target", TARGET_COLOR),
        ("transported", MAPPED_COLOR),
    ]
    .iter()
    .enumerate()
    {
        let y = f.top + 20.0 + 22.0 * i as f64;
        let _ = writeln!(
            svg,
            r##"<circle cx="{lx:.2}" cy="{y:.2}" r="5" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="12">{label}</text>"##,
            lx + 12.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{lx:.2}" y="{:.2}" font-size="11">n = {}</text>"##,
        f.top + 100.0,
        source.nrows()
    );
    let _ = writeln!(
        svg,
        r##"<text x="{lx:.2}" y="{:.2}" font-size="11">seeds: data={} noise={}</text><text x="{lx:.2}" y="{:.2}" font-size="11">init={} eval={}</text>"##,
        f.top + 118.0,
        seeds.data,
        seeds.noise,
        f.top + 134.0,
        seeds.init,
        seeds.eval
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Two panels of reconstructed functions on [-1, 1]: the first `count`
/// source samples and their images.
pub fn curves_svg(
    basis: &BasisSpec,
    before: ArrayView2<'_, f64>,
    after: ArrayView2<'_, f64>,
    count: usize,
) -> Result<String> {
    check_nonempty("source", before)?;
    check_nonempty("transported", after)?;
    if before.dim() != after.dim() || before.ncols() != basis.num_modes {
        return Err(Error::shape("curves_svg", before.shape(), after.shape()));
    }
    let count = count.min(before.nrows()).max(1);
    let grid = uniform_grid(201)?;
    let design = basis.design_matrix(&grid)?; // M x K
    let eval = |x: ArrayView2<'_, f64>| -> Array2<f64> { x.slice(ndarray::s![..count, ..]).dot(&design.t()) };
    let panels = [("before transport", eval(before)), ("after transport", eval(after))];
    let ymax = panels
        .iter()
        .flat_map(|(_, v)| v.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-9)
        * 1.1;

    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
    let (pw, ph, top) = (380.0, 260.0, 50.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="860" height="360" viewBox="0 0 860 360">"##
    );
    let _ = writeln!(svg, r##"<rect width="860" height="360" fill="#fff"/>"##);
    for (p, (title, values)) in panels.iter().enumerate() {
        let left = 60.0 + p as f64 * (pw + 50.0);
        let px = |t: f64| left + (t + 1.0) / 2.0 * pw;
        let py = |v: f64| top + (ymax - v) / (2.0 * ymax) * ph;
        let _ = writeln!(
            svg,
            r##"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{title}</text>"##,
            left + pw / 2.0,
            top - 12.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ccc" stroke-dasharray="3,3"/>"##,
            py(0.0),
            left + pw,
            py(0.0)
        );
        for (label, t) in [("-1", -1.0), ("0", 0.0), ("1", 1.0)] {
            let _ = writeln!(
                svg,
                r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{label}</text>"##,
                px(t),
                top + ph + 16.0
            );
        }
        for (label, v) in [(format!("{ymax:.2}"), ymax), (format!("{:.2}", -ymax), -ymax)] {
            let _ = writeln!(
                svg,
                r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{label}</text>"##,
                left - 5.0,
                py(v) + 4.0
            );
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            let mut d = String::new();
            for (k, (&t, &v)) in grid.iter().zip(row.iter()).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, px(t), py(v));
            }
            let _ = writeln!(
                svg,
                r##"<path d="{d}" fill="none" stroke="{}" stroke-width="1.2"/>"##,
                palette[i % palette.len()]
            );
        }
    }
    let _ = writeln!(
        svg,
        r##"<text x="430" y="345" font-size="12" text-anchor="middle">t ({} basis, K = {})</text>"##,
        format!("{:?}", basis.kind).to_lowercase(),
        basis.num_modes
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
