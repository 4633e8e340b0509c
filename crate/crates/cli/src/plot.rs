//! Minimal SVG rendering of a FROC curve.

use stratdet_core::FrocCurve;

use crate::records::fmt_num;

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

pub fn froc_svg(curve: &FrocCurve) -> String {
    let last_fp = curve.points.last().map_or(0.0, |p| p.fp_per_patient);
    let max_point = curve.sens_at.last().map_or(1.0, |(f, _)| *f);
    let x_max = last_fp.max(max_point).max(1e-9);
    let sx = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y * (H - 2.0 * PAD);

    // step function: sensitivity jumps at constant FP, FP grows at constant sensitivity
    let mut path = format!("M{:.2},{:.2}", sx(0.0), sy(0.0));
    let mut prev_sens = 0.0;
    for p in &curve.points {
        path += &format!(" L{:.2},{:.2}", sx(p.fp_per_patient), sy(prev_sens));
        path += &format!(" L{:.2},{:.2}", sx(p.fp_per_patient), sy(p.sensitivity));
        prev_sens = p.sensitivity;
    }
    path += &format!(" L{:.2},{:.2}", sx(x_max), sy(prev_sens));

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    s += &format!(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n\
         <line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{3}\" stroke=\"black\"/>\n",
        PAD,
        H - PAD,
        W - PAD,
        PAD
    );
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        s += &format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            PAD - 6.0,
            sy(y) + 4.0,
            fmt_num(y)
        );
    }
    for &(f, v) in &curve.sens_at {
        s += &format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n\
             <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"firebrick\"/>\n",
            sx(f),
            H - PAD + 16.0,
            fmt_num(f),
            sx(f),
            sy(v)
        );
    }
    s += &format!("<path d=\"{path}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n");
    s += &format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">FPs per patient</text>\n\
         <text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">sensitivity</text>\n",
        W / 2.0,
        H - 8.0,
        H / 2.0,
        H / 2.0
    );
    s += "</svg>\n";
    s
}
