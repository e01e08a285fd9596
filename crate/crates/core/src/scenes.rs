//! Built-in synthetic scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame_source::{ActorSpec, BackgroundSpec, Limbs, OscillatorSpec, SceneSpec, Shape, Texture};

pub const PRESETS: [&str; 4] = ["benchmark", "rigid", "deforming", "two-regime"];

pub fn preset(name: &str) -> Option<SceneSpec> {
    match name {
        "benchmark" => Some(benchmark(600)),
        "rigid" => Some(rigid()),
        "deforming" => Some(deforming()),
        "two-regime" => Some(two_regime()),
        _ => None,
    }
}

fn base(seed: u64, fps: f64, frames: u64) -> SceneSpec {
    SceneSpec {
        seed,
        width: 160,
        height: 120,
        fps,
        duration_frames: frames,
        noise: 2,
        background: BackgroundSpec::Gradient {
            top: 50,
            bottom: 110,
            texture: 6,
        },
        oscillators: Vec::new(),
        actors: Vec::new(),
    }
}

fn car_texture() -> Texture {
    Texture::Blocks { cell: 3, lo: 150, hi: 250 }
}

fn person(id: u32, start: u64, from: (f64, f64), to: (f64, f64), frames: u64) -> ActorSpec {
    let mut a = ActorSpec::linear(
        id,
        "person",
        (12, 24),
        Texture::Blocks { cell: 3, lo: 120, hi: 250 },
        (start, start + frames),
        from,
        to,
    );
    a.limbs = Some(Limbs {
        reach: 4,
        period: 16,
        value: 235,
        thickness: 3,
    });
    a
}

/// Cars on two opposing lanes, pedestrians on a sidewalk, a parked car
/// and a swaying background element, at 10 fps for `seconds` seconds.
/// Every minute has a busy first half and a quiet second half.
pub fn benchmark(seconds: u64) -> SceneSpec {
    let fps = 10.0;
    let frames = seconds * 10;
    let mut s = base(42, fps, frames);
    s.oscillators.push(OscillatorSpec {
        x: 144,
        y: 4,
        w: 8,
        h: 14,
        shift: 3,
        period: 20,
        value: 30,
    });
    let mut id = 1;
    let mut parked = ActorSpec::linear(id, "car", (28, 16), car_texture(), (0, frames), (124.0, 96.0), (124.0, 96.0));
    parked.path = vec![(0, 124.0, 96.0)];
    s.actors.push(parked);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for minute in 0..frames.div_ceil(600) {
        let m0 = minute * 600;
        // (lane y, direction, speed)
        for (lane, (y, rightward, speed)) in [(24.0, true, 1.5), (50.0, false, 2.0)].into_iter().enumerate() {
            let mut t = m0 + rng.gen_range(0..20) + lane as u64 * 7;
            let mut first = true;
            while t < m0 + 560 {
                let w = rng.gen_range(22..30);
                let h = rng.gen_range(12..16);
                let span = 126.0 - w as f64;
                let dur = (span / speed).round() as u64;
                let (x0, x1) = if rightward { (4.0, 4.0 + span) } else { (4.0 + span, 4.0) };
                // The first car of each minute on the upper lane pauses
                // mid-road for three seconds.
                let pause = if lane == 0 && first { 30 } else { 0 };
                if t + dur + pause >= frames {
                    break;
                }
                id += 1;
                let mut car = ActorSpec::linear(id, "car", (w, h), car_texture(), (t, t + dur + pause + 1), (x0, y), (x1, y));
                if pause > 0 {
                    let mid = t + dur / 2;
                    let xm = x0 + (x1 - x0) * (mid - t) as f64 / dur as f64;
                    car.path = vec![(t, x0, y), (mid, xm, y), (mid + pause, xm, y), (t + dur + pause, x1, y)];
                }
                s.actors.push(car);
                let gap = if t < m0 + 300 { rng.gen_range(30..55) } else { rng.gen_range(110..170) };
                t += gap + pause;
                first = false;
            }
        }
        let mut t = m0 + rng.gen_range(0..30);
        while t < m0 + 520 {
            let dur = 180;
            if t + dur >= frames {
                break;
            }
            id += 1;
            s.actors.push(person(id, t, (8.0, 86.0), (98.0, 86.0), dur));
            t += if t < m0 + 300 { rng.gen_range(45..70) } else { rng.gen_range(140..200) };
        }
    }
    s
}

/// Rigid cars at 30 fps, moving 0.2 px per source frame. Sampling one
/// frame per second leaves an integer 6 px step.
pub fn rigid() -> SceneSpec {
    let frames = 30 * 300;
    let mut s = base(5, 30.0, frames);
    s.background = BackgroundSpec::Gradient {
        top: 50,
        bottom: 110,
        texture: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut id = 0;
    for (y, rightward) in [(24.0, true), (56.0, false)] {
        let mut t = rng.gen_range(0..300);
        while t + 600 < frames {
            let w = rng.gen_range(32..40);
            let span = 126.0 - w as f64;
            let dur = (span / 0.2).round() as u64;
            let (x0, x1) = if rightward { (4.0, 4.0 + span) } else { (4.0 + span, 4.0) };
            id += 1;
            s.actors.push(ActorSpec::linear(id, "car", (w, 18), car_texture(), (t, (t + dur + 1).min(frames)), (x0, y), (x1, y)));
            t += dur / 2 + rng.gen_range(60..400);
        }
    }
    s
}

/// One slow pedestrian-like actor whose arms extend and retract over a
/// 160-frame cycle, at 10 fps.
pub fn deforming() -> SceneSpec {
    let frames = 600;
    let mut s = base(9, 10.0, frames);
    let mut a = ActorSpec::linear(
        1,
        "person",
        (16, 30),
        Texture::Blocks { cell: 3, lo: 150, hi: 240 },
        (0, frames),
        (40.0, 40.0),
        (100.0, 50.0),
    );
    a.shape = Shape::Ellipse;
    a.limbs = Some(Limbs {
        reach: 18,
        period: 160,
        value: 235,
        thickness: 4,
    });
    a.scale = vec![(0, 1.0), (300, 1.35), (599, 1.0)];
    s.actors.push(a);
    s
}

/// Five quiet minutes-worth of chunks followed by five busy ones, with
/// 30 s chunks at 10 fps.
pub fn two_regime() -> SceneSpec {
    let frames = 3000;
    let mut s = base(13, 10.0, frames);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut id = 0;
    let mut t = 10;
    while t < 1500 {
        let w = rng.gen_range(22..28);
        let span = 126.0 - w as f64;
        let dur = (span / 0.5).round() as u64;
        id += 1;
        s.actors.push(ActorSpec::linear(id, "car", (w, 14), car_texture(), (t, t + dur + 1), (4.0, 30.0), (4.0 + span, 30.0)));
        t += dur + 1 + rng.gen_range(20..40);
    }
    // Busy half: cars grow as they approach and flex their outline, so
    // propagated boxes drift with distance.
    for (y, rightward, speed) in [(20.0, true, 2.5), (46.0, false, 3.0), (72.0, true, 2.0)] {
        let mut t = 1500 + rng.gen_range(0..20);
        while t < frames - 80 {
            let w = rng.gen_range(22..28);
            let span = 104.0 - w as f64 * 0.25 - w as f64;
            let dur = (span / speed).round() as u64;
            if t + dur >= frames {
                break;
            }
            let (x0, x1) = if rightward { (12.0, 12.0 + span) } else { (12.0 + span, 12.0) };
            id += 1;
            let mut car = ActorSpec::linear(id, "car", (w, 14), car_texture(), (t, t + dur + 1), (x0, y), (x1, y));
            car.scale = vec![(t, 0.8), (t + dur, 1.25)];
            car.limbs = Some(Limbs {
                reach: 8,
                period: 40,
                value: 235,
                thickness: 4,
            });
            s.actors.push(car);
            t += rng.gen_range(24..36);
        }
    }
    s
}
