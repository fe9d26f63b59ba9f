mod common;

use conepose::cone_model::{default_cone_model, ColorClass, CR3D};
use conepose::geometry::{project, CameraIntrinsics};
use conepose::seed;
use conepose::synth::{
    cone_pose, default_extrinsic, generate_scene, load_patches, perturb_bbox, read_manifest,
    write_dataset, BBox, BBoxPerturbation, ConePlacement, SceneSpec, MANIFEST_FILE, SCENE_FILE,
};
use nalgebra::Point3;
use std::path::Path;

fn spec_with(positions: &[(f64, f64)], camera_height: f64) -> SceneSpec {
    SceneSpec {
        cones: positions
            .iter()
            .map(|&(x, y)| ConePlacement {
                position: Point3::new(x, y, 0.0),
                color_class: ColorClass::Orange,
            })
            .collect(),
        camera_extrinsic: default_extrinsic(camera_height),
        intrinsics: CameraIntrinsics::default_synthetic(),
        seed: 0,
    }
}

#[test]
fn on_axis_cone_is_centered_and_symmetric() {
    // Camera at half the cone height: the optical axis hits the cone middle.
    let spec = spec_with(&[(10.0, 0.0)], 0.1625);
    let scene = generate_scene(&spec, &default_cone_model());
    assert_eq!(scene.cones.len(), 1);
    let cone = &scene.cones[0];
    let k = spec.intrinsics;
    let c = cone.bbox.center();
    assert!(
        (c.x - k.cx).abs() < 1e-6 && (c.y - k.cy).abs() < 1e-6,
        "{c:?}"
    );
    let p = &cone.truth_keypoints.points;
    assert!((p[0].x - 40.0).abs() < 1e-6);
    for (l, r) in [(1, 4), (2, 5), (3, 6)] {
        assert!((p[l].x + p[r].x - 80.0).abs() < 1e-6);
        assert!((p[l].y - p[r].y).abs() < 1e-6);
    }
}

#[test]
fn box_height_scales_inversely_with_depth() {
    let spec = spec_with(&[(4.0, 0.0), (18.0, 0.0)], 1.0);
    let scene = generate_scene(&spec, &default_cone_model());
    assert_eq!(scene.cones.len(), 2);
    let ratio = scene.cones[0].bbox.height() / scene.cones[1].bbox.height();
    assert!((ratio / (18.0 / 4.0) - 1.0).abs() < 0.01, "{ratio}");
}

#[test]
fn labels_are_exact_projections_with_target_cross_ratio() {
    let model = default_cone_model();
    for s in 0..3 {
        let spec = common::scene(104, s);
        let scene = generate_scene(&spec, &model);
        assert_eq!(scene.cones.len(), 104);
        for cone in &scene.cones {
            let pose = cone_pose(
                &spec.camera_extrinsic,
                &spec.cones[cone.cone_index].position,
            );
            for (label, kp) in cone
                .truth_keypoints
                .image_points()
                .iter()
                .zip(&model.keypoints)
            {
                let exact = project(&spec.intrinsics, &pose, kp).unwrap();
                assert!((label - exact).norm() < 1e-9);
            }
            for cr in cone.truth_keypoints.arm_cross_ratios().unwrap() {
                assert!((cr - CR3D).abs() < 1e-6, "{cr}");
            }
            assert!((cone.truth_camera.z - pose.translation.z).abs() < 1e-12);
            assert!((4.0..=18.0).contains(&cone.truth_camera.z));
        }
    }
}

#[test]
fn bbox_perturbation_distribution() {
    let k = CameraIntrinsics::default_synthetic();
    let bbox = BBox {
        x0: 600.0,
        y0: 400.0,
        x1: 700.0,
        y1: 600.0,
    };
    let n = 10_000;
    let mut sums = [0.0; 4];
    for i in 0..n {
        let p = BBoxPerturbation {
            magnitude: 0.2,
            seed: seed::indexed(1, i),
        };
        let out = perturb_bbox(&bbox, &p, &k).unwrap();
        let d = [
            (out.x0 - bbox.x0) / bbox.width(),
            (out.y0 - bbox.y0) / bbox.height(),
            (out.x1 - bbox.x1) / bbox.width(),
            (out.y1 - bbox.y1) / bbox.height(),
        ];
        for (s, v) in sums.iter_mut().zip(d) {
            assert!(v.abs() <= 0.2 + 1e-12);
            *s += v;
        }
    }
    for s in sums {
        // Standard error of the mean is 0.2 / sqrt(3 n) ~ 0.0012.
        assert!((s / n as f64).abs() < 0.005, "{}", s / n as f64);
    }
}

#[test]
fn corner_boxes_stay_inside_image() {
    let k = CameraIntrinsics::default_synthetic();
    for bbox in [
        BBox {
            x0: 0.0,
            y0: 0.0,
            x1: 60.0,
            y1: 90.0,
        },
        BBox {
            x0: 1540.0,
            y0: 1110.0,
            x1: 1600.0,
            y1: 1200.0,
        },
    ] {
        for i in 0..1000 {
            let p = BBoxPerturbation {
                magnitude: 0.2,
                seed: i,
            };
            let out = perturb_bbox(&bbox, &p, &k).unwrap();
            assert!(out.x0 >= 0.0 && out.y0 >= 0.0);
            assert!(out.x1 <= k.width as f64 && out.y1 <= k.height as f64);
        }
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&common::scene(20, 4), &default_cone_model());
    let written = write_dataset(&scene.cones, dir.path()).unwrap();
    let read = read_manifest(dir.path()).unwrap();
    assert_eq!(read.records, written.records);
    let patches = load_patches(dir.path(), &read).unwrap();
    for ((r, c), p) in read.records.iter().zip(&scene.cones).zip(&patches) {
        assert_eq!(r.keypoints, c.truth_keypoints);
        assert_eq!(r.truth_position, c.truth_position);
        assert_eq!(p.to_rgb8(), c.patch.to_rgb8());
    }
}

#[test]
fn empty_dataset_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&[], dir.path()).unwrap();
    assert!(read_manifest(dir.path()).unwrap().records.is_empty());
}

#[test]
fn thousand_record_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&common::scene(50, 5), &default_cone_model());
    let cones: Vec<_> = scene.cones.iter().cycle().take(1000).cloned().collect();
    write_dataset(&cones, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1000);
    assert_eq!(read_manifest(dir.path()).unwrap().records.len(), 1000);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_spec_gives_byte_identical_dataset() {
    let model = default_cone_model();
    let spec = common::scene(30, 6);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let scene = generate_scene(&spec, &model);
        write_dataset(&scene.cones, d.path()).unwrap();
        std::fs::write(d.path().join(SCENE_FILE), spec.to_toml()).unwrap();
    }
    let a = dir_bytes(dirs[0].path());
    assert_eq!(a.len(), 32);
    assert_eq!(a, dir_bytes(dirs[1].path()));
}
