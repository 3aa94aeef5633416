//! Static SVG scatter of RD points: total BPP against PSNR for the general
//! (x̃) and high (x̂) reconstructions.

use std::fmt::Write;

use hmic::metrics::rd::RdPoint;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

pub fn rd_svg(points: &[RdPoint]) -> String {
    let (x0, x1) = extent(points.iter().flat_map(|p| [p.bpp[0] + p.bpp[1], p.bpp_total()]));
    let (y0, y1) = extent(points.iter().flat_map(|p| [p.psnr_general, p.psnr_high]));
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |v: f64| H - MARGIN - (v - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{bottom} H{right}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#,
            bottom + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{py:.1}" text-anchor="end" dominant-baseline="middle">{yv:.1}</text>"#,
            left - 6.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">bits per pixel</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">PSNR (dB)</text>"#,
        H / 2.0,
        H / 2.0
    );
    // x̃ needs streams 1–2 only, so it sits at their rate
    for p in points {
        let general = (p.bpp[0] + p.bpp[1], p.psnr_general);
        let high = (p.bpp_total(), p.psnr_high);
        for ((x, y), color) in [(general, "#1f77b4"), (high, "#d62728")] {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"><title>{} qp {}</title></circle>"#,
                    sx(x),
                    sy(y),
                    p.image_id,
                    p.qp
                );
            }
        }
    }
    for (i, (label, color)) in [("general (x̃)", "#1f77b4"), ("high (x̂)", "#d62728")].iter().enumerate() {
        let y = top + 14.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#, right - 90.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" dominant-baseline="middle">{label}</text>"#,
            right - 82.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_two_markers_per_point() {
        let p = RdPoint {
            image_id: "a".into(),
            qp: 27,
            bpp: [0.1, 0.2, 0.5],
            psnr_general: 25.0,
            psnr_high: f64::INFINITY,
            msssim_general: 0.9,
            msssim_high: 1.0,
            map_det: 1.0,
            map_seg: 1.0,
        };
        let mut q = p.clone();
        q.psnr_high = 33.0;
        let svg = rd_svg(&[p, q]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        // 3 finite points + 2 legend markers
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(rd_svg(&[]).contains("</svg>"));
    }
}
