use mcma::eval::fp_rate;
use mcma::flow::{downscale_frame, estimate_flow, mean_flow_magnitude};
use mcma::synth::{generate, motion_profile, ObjectSpec, SceneSpec, Shape};
use mcma::{FlowParams, FlowScale, Frame, Model, ModelSpec, SegmentationModel};

fn textured(shift: (f64, f64), size: usize) -> (Frame, Frame) {
    let spec = SceneSpec {
        width: size,
        height: size,
        frames: 2,
        seed: 9,
        class_colors: vec![[128, 128, 128], [0, 0, 0]],
        texture_amplitude: 24.0,
        pan: shift,
        ..Default::default()
    };
    let mut seq = generate(&spec).unwrap();
    let curr = seq.frames.pop().unwrap();
    (seq.frames.pop().unwrap(), curr)
}

fn interior_epe(prev: &Frame, curr: &Frame, truth: (f32, f32)) -> f64 {
    let params = FlowParams::default();
    let flow = estimate_flow(prev, curr, &params).unwrap();
    let b = params.window_size;
    let mut sum = 0.0;
    let mut n = 0;
    for y in b..flow.height() - b {
        for x in b..flow.width() - b {
            let (u, v) = flow.at(x, y);
            sum += ((u - truth.0) as f64).hypot((v - truth.1) as f64);
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn recovers_translations() {
    let (p, c) = textured((3.0, 0.0), 128);
    assert!(interior_epe(&p, &c, (-3.0, 0.0)) < 0.5);
    let (p, c) = textured((2.0, 4.0), 128);
    assert!(interior_epe(&p, &c, (-2.0, -4.0)) < 0.5);
}

#[test]
fn identical_textured_frames_have_no_motion() {
    let (p, _) = textured((0.0, 0.0), 96);
    let flow = estimate_flow(&p, &p.clone().with_index(1), &FlowParams::default()).unwrap();
    assert!(mean_flow_magnitude(&flow) < 0.05);
    assert!(flow.u().iter().chain(flow.v()).all(|v| v.abs() < 0.05));
}

#[test]
fn working_resolution_downscales() {
    let f = Frame::new(640, 512, 3, vec![7; 640 * 512 * 3]).unwrap();
    let half = downscale_frame(&f, FlowScale::Half).unwrap();
    let quarter = downscale_frame(&f, FlowScale::Quarter).unwrap();
    assert_eq!((half.width(), half.height()), (320, 256));
    assert_eq!((quarter.width(), quarter.height()), (160, 128));
    assert!(quarter.data().iter().all(|&v| v == 7));
}

fn one_object(shape: Shape, velocity: (f64, f64)) -> ObjectSpec {
    ObjectSpec {
        shape,
        class: 1,
        color: None,
        position: (40.0, 30.0),
        velocity,
    }
}

#[test]
fn ground_truth_flow_carries_masks_forward() {
    let spec = SceneSpec {
        width: 96,
        height: 64,
        frames: 6,
        objects: vec![
            one_object(Shape::Rect { width: 20.0, height: 14.0 }, (3.0, -1.0)),
            ObjectSpec {
                position: (60.0, 40.0),
                ..one_object(Shape::Disk { radius: 9.0 }, (-2.0, 2.0))
            },
        ],
        ..Default::default()
    };
    let seq = generate(&spec).unwrap();
    for j in 1..seq.len() {
        let (prev, curr, flow) = (&seq.masks[j - 1], &seq.masks[j], &seq.flows[j]);
        for y in 1..curr.height() - 1 {
            for x in 1..curr.width() - 1 {
                // interior object pixels: every neighbor has the same label
                let label = curr.get(x, y);
                let interior = label != 0
                    && [(0, 1), (2, 1), (1, 0), (1, 2)]
                        .iter()
                        .all(|&(dx, dy)| curr.get(x + dx - 1, y + dy - 1) == label);
                if !interior {
                    continue;
                }
                let (u, v) = flow.at(x, y);
                let sx = (x as f32 + u).round() as usize;
                let sy = (y as f32 + v).round() as usize;
                assert_eq!(prev.get(sx, sy), label, "frame {j} at ({x}, {y})");
            }
        }
    }
}

#[test]
fn motion_profile_counts_moving_area() {
    let still = SceneSpec {
        width: 64,
        height: 48,
        frames: 4,
        objects: vec![one_object(Shape::Disk { radius: 8.0 }, (0.0, 0.0))],
        ..Default::default()
    };
    assert!(motion_profile(&generate(&still).unwrap()).iter().all(|&m| m == 0.0));

    let disk = SceneSpec {
        objects: vec![one_object(Shape::Disk { radius: 8.0 }, (3.0, 4.0))],
        ..still.clone()
    };
    let seq = generate(&disk).unwrap();
    let profile = motion_profile(&seq);
    assert_eq!(profile[0], 0.0);
    for j in 1..seq.len() {
        let area = seq.masks[j].labels().iter().filter(|&&l| l == 1).count();
        let expected = 5.0 * area as f64 / (64.0 * 48.0);
        assert!((profile[j] - expected).abs() < 1e-12);
    }
    // still fully inside at frame 1: about pi * 64 pixels
    let area = seq.masks[1].labels().iter().filter(|&&l| l == 1).count();
    assert!((area as f64 - std::f64::consts::PI * 64.0).abs() < 12.0, "{area}");

    let two = SceneSpec {
        objects: vec![
            one_object(Shape::Rect { width: 10.0, height: 8.0 }, (3.0, 0.0)),
            ObjectSpec {
                position: (20.0, 36.0),
                ..one_object(Shape::Rect { width: 6.0, height: 6.0 }, (0.0, -4.0))
            },
        ],
        ..still
    };
    let p = motion_profile(&generate(&two).unwrap());
    let expected = (3.0 * 80.0 + 4.0 * 36.0) / (64.0 * 48.0);
    assert!((p[2] - expected).abs() < 1e-12);
}

#[test]
fn label_noise_creates_baseline_false_positives() {
    let spec = SceneSpec {
        width: 64,
        height: 64,
        frames: 100,
        label_noise_rate: 0.01,
        label_noise_class: Some(1),
        ..Default::default()
    };
    let seq = generate(&spec).unwrap();
    let model = Model::new(ModelSpec::from_class_colors(&spec.class_colors)).unwrap();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (frame, gt) in seq.frames.iter().zip(&seq.masks) {
        let pred = model.decode(&model.encode(frame).unwrap()).unwrap();
        total += fp_rate(&pred, gt, 1).unwrap();
        counted += pred.labels().iter().zip(gt.labels()).filter(|(p, g)| **p == 1 && **g != 1).count();
    }
    assert!(total > 0.0);
    assert!((total - counted as f64 / (64.0 * 64.0)).abs() < 1e-9);
}
