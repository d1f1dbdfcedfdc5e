use crate::geometry::{point_segment_distance, Pose, Rect};

use super::MissionError;

/// Boustrophedon route over `area`: lanes parallel to y, stacked along x
/// and centred so the outer lanes sit at most `lane_spacing / 2` inside the
/// boundary. The route begins at the lane end nearest the area corner
/// closest to `entry`. Waypoints carry `entry.z` as altitude.
pub fn lawnmower_path(area: &Rect, lane_spacing: f64, entry: &Pose) -> Result<Vec<Pose>, MissionError> {
    if !area.is_valid() {
        return Err(MissionError::InvalidArgument(format!("degenerate sweep area {area:?}")));
    }
    if !(lane_spacing.is_finite() && lane_spacing > 0.0) {
        return Err(MissionError::InvalidArgument(format!("lane spacing must be positive, got {lane_spacing}")));
    }
    if lane_spacing > area.width().min(area.height()) {
        return Err(MissionError::InvalidArgument(format!(
            "lane spacing {lane_spacing} exceeds the smaller side of {area:?}"
        )));
    }

    let lanes = (area.width() / lane_spacing).ceil().max(1.0) as usize;
    let margin = (area.width() - (lanes - 1) as f64 * lane_spacing) / 2.0;

    let (cx, cy) = area
        .corners()
        .into_iter()
        .min_by(|a, b| {
            let da = (a.0 - entry.x).hypot(a.1 - entry.y);
            let db = (b.0 - entry.x).hypot(b.1 - entry.y);
            da.total_cmp(&db)
        })
        .expect("four corners");
    let from_max_x = cx == area.max_x;
    let mut start_at_max_y = cy == area.max_y;

    let mut out = Vec::with_capacity(lanes * 2);
    for i in 0..lanes {
        let offset = margin + i as f64 * lane_spacing;
        let x = if from_max_x { area.max_x - offset } else { area.min_x + offset };
        let (y0, y1) = if start_at_max_y { (area.max_y, area.min_y) } else { (area.min_y, area.max_y) };
        out.push(Pose::xyz(x, y0, entry.z));
        out.push(Pose::xyz(x, y1, entry.z));
        start_at_max_y = !start_at_max_y;
    }
    Ok(out)
}

/// Largest horizontal distance from any sample to the polyline through
/// `path`. A single point counts as a zero-length segment.
pub fn max_gap(samples: &[(f64, f64)], path: &[Pose]) -> f64 {
    let pts: Vec<(f64, f64)> = path.iter().map(|p| (p.x, p.y)).collect();
    let segments: Vec<((f64, f64), (f64, f64))> = match pts.len() {
        0 => return f64::INFINITY,
        1 => vec![(pts[0], pts[0])],
        _ => pts.windows(2).map(|w| (w[0], w[1])).collect(),
    };
    samples
        .iter()
        .map(|&s| segments.iter().map(|&(a, b)| point_segment_distance(s, a, b)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}
