//! Minimal SVG writer for the closed-loop convergence plot: `‖z₀(x_k)‖` and
//! `‖v₀(x_k)‖` against the step index on a base-10 log scale.

use rigidtube::sim::ClosedLoopTrace;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
/// Values at exact zero still need a finite log; everything below this floor
/// renders on the bottom gridline.
const FLOOR: f64 = 1e-16;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn trace_plot(trace: &ClosedLoopTrace) -> String {
    let z: Vec<f64> = trace.steps.iter().map(|s| norm2(&s.z0).max(FLOOR)).collect();
    let v: Vec<f64> = trace.steps.iter().map(|s| norm2(&s.v0).max(FLOOR)).collect();
    let n = z.len().max(1);

    let y_max = z
        .iter()
        .chain(v.iter())
        .fold(f64::MIN, |a, b| a.max(*b))
        .log10()
        .ceil();
    let y_min = z
        .iter()
        .chain(v.iter())
        .fold(f64::MAX, |a, b| a.min(*b))
        .log10()
        .floor();
    let y_min = y_min.max(-16.0);
    let y_span = (y_max - y_min).max(1.0);

    let px = |k: usize| MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * k as f64 / (n - 1).max(1) as f64;
    let py = |val: f64| {
        let t = (val.log10() - y_min) / y_span;
        HEIGHT - MARGIN_B - (HEIGHT - MARGIN_T - MARGIN_B) * t
    };

    let path = |series: &[f64]| {
        series
            .iter()
            .enumerate()
            .map(|(k, val)| format!("{:.2},{:.2}", px(k), py(*val)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut grid = String::new();
    let decades = y_span as i64;
    let step = (decades / 8).max(1);
    let mut d = y_min as i64;
    while d <= y_max as i64 {
        let y = py(10f64.powi(d as i32));
        grid.push_str(&format!(
            "<line x1='{MARGIN_L}' y1='{y:.2}' x2='{:.2}' y2='{y:.2}' stroke='#ddd'/>\n\
             <text x='{:.2}' y='{:.2}' font-size='11' text-anchor='end' fill='#444'>1e{d}</text>\n",
            WIDTH - MARGIN_R,
            MARGIN_L - 6.0,
            y + 4.0
        ));
        d += step;
    }
    let mut ticks = String::new();
    let k_step = (n / 10).max(1);
    for k in (0..n).step_by(k_step) {
        ticks.push_str(&format!(
            "<text x='{:.2}' y='{:.2}' font-size='11' text-anchor='middle' fill='#444'>{k}</text>\n",
            px(k),
            HEIGHT - MARGIN_B + 18.0
        ));
    }

    format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{WIDTH}' height='{HEIGHT}' viewBox='0 0 {WIDTH} {HEIGHT}'>\n\
         <rect width='{WIDTH}' height='{HEIGHT}' fill='white'/>\n\
         {grid}{ticks}\
         <rect x='{MARGIN_L}' y='{MARGIN_T}' width='{:.2}' height='{:.2}' fill='none' stroke='#888'/>\n\
         <polyline points='{}' fill='none' stroke='#1f77b4' stroke-width='1.8'/>\n\
         <polyline points='{}' fill='none' stroke='#d62728' stroke-width='1.8'/>\n\
         <text x='{:.2}' y='{:.2}' font-size='12' fill='#1f77b4'>|z0_k|</text>\n\
         <text x='{:.2}' y='{:.2}' font-size='12' fill='#d62728'>|v0_k|</text>\n\
         <text x='{:.2}' y='{:.2}' font-size='12' text-anchor='middle' fill='#222'>step k (log-scale norms)</text>\n\
         </svg>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B,
        path(&z),
        path(&v),
        WIDTH - 130.0,
        MARGIN_T + 16.0,
        WIDTH - 130.0,
        MARGIN_T + 34.0,
        WIDTH / 2.0,
        HEIGHT - 12.0,
    )
}
