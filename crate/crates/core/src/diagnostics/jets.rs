use serde::{Deserialize, Serialize};

/// Minimum peak prominence as a fraction of `max|U|`.
pub const DEFAULT_PROMINENCE: f64 = 0.2;
/// Frames a jet count must persist before it is trusted.
pub const DEFAULT_DEBOUNCE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Nucleation,
    Coalescence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub time: f64,
    pub count_before: usize,
    pub count_after: usize,
}

/// Number of circular local maxima of `profile` whose topographic
/// prominence exceeds `prominence · max|U|`.
pub fn count_jets(profile: &[f64], prominence: f64) -> usize {
    let n = profile.len();
    if n < 3 {
        return 0;
    }
    let scale = profile.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = prominence * scale;
    let at = |i: isize| profile[i.rem_euclid(n as isize) as usize];
    let mut count = 0;
    for i in 0..n as isize {
        let h = at(i);
        // Strict on the left, non-strict on the right: one peak per plateau.
        if !(h > at(i - 1) && h >= at(i + 1)) {
            continue;
        }
        let mut base = [h, h];
        let mut higher = [false, false];
        for (side, dir) in [(0usize, -1isize), (1, 1)] {
            for step in 1..n as isize {
                let v = at(i + dir * step);
                if v > h {
                    higher[side] = true;
                    break;
                }
                base[side] = base[side].min(v);
            }
        }
        // The key col of the highest peak is the global minimum.
        let col = match higher {
            [false, false] => base[0].min(base[1]),
            [true, false] => base[0],
            [false, true] => base[1],
            [true, true] => base[0].max(base[1]),
        };
        if h - col > threshold {
            count += 1;
        }
    }
    count
}

pub fn jet_counts(frames: &[Vec<f64>], prominence: f64) -> Vec<usize> {
    frames.iter().map(|f| count_jets(f, prominence)).collect()
}

/// Events from changes in the debounced jet count.
///
/// Runs of equal count shorter than `debounce` frames are ignored; each
/// step between consecutive retained runs emits one event per unit change,
/// stamped with the first frame of the new run. Reversing the frames swaps
/// the event kinds exactly.
pub fn detect_events(frames: &[Vec<f64>], prominence: f64, debounce: usize, start_time: f64, interval: f64) -> Vec<EventRecord> {
    let counts = jet_counts(frames, prominence);
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        match runs.last_mut() {
            Some((value, _, len)) if *value == c => *len += 1,
            _ => runs.push((c, i, 1)),
        }
    }
    let stable: Vec<(usize, usize)> = runs
        .into_iter()
        .filter(|&(_, _, len)| len >= debounce.max(1))
        .map(|(c, start, _)| (c, start))
        .collect();
    let mut events = Vec::new();
    for w in stable.windows(2) {
        let ((from, _), (to, start)) = (w[0], w[1]);
        let time = start_time + start as f64 * interval;
        let mut c = from;
        while c != to {
            let next = if to > c { c + 1 } else { c - 1 };
            events.push(EventRecord {
                kind: if next > c {
                    EventKind::Nucleation
                } else {
                    EventKind::Coalescence
                },
                time,
                count_before: c,
                count_after: next,
            });
            c = next;
        }
    }
    events
}
