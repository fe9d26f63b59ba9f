//! Synthetic scenes: cone placement, a minimal software rasterizer, patch
//! extraction, bounding-box perturbation and on-disk datasets.
//!
//! The vehicle (ego) frame has x forward, y left and z up, with the ground at
//! z = 0. Each cone stands upright on the ground and is turned about its
//! vertical axis so that its keypoint plane faces the camera.

use std::fmt::Write as _;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone_model::{ColorClass, ConeModel, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, RigidTransform};
use crate::keypoint_loss::{KeypointSet, PatchAffine, PATCH_SIZE};
use crate::regressor::{Patch, CHANNELS, PATCH_LEN};
use crate::seed;

/// Fractional margin added on every side of the tight keypoint box.
pub const BBOX_MARGIN: f64 = 0.1;
pub const MIN_CONE_SEPARATION: f64 = 0.5;
pub const MAX_CONE_DEPTH: f64 = 50.0;
pub const MIN_BOX_SIDE: f64 = 8.0;
pub const DEFAULT_DEPTH_RANGE: (f64, f64) = (4.0, 18.0);
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn patch_affine(&self) -> PatchAffine {
        PatchAffine::from_rect(self.x0, self.y0, self.x1, self.y1)
    }

    pub fn around(points: &[Point2<f64>], margin: f64) -> BBox {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let (mx, my) = (margin * (x1 - x0), margin * (y1 - y0));
        BBox {
            x0: x0 - mx,
            y0: y0 - my,
            x1: x1 + mx,
            y1: y1 + my,
        }
    }

    pub fn inside(&self, k: &CameraIntrinsics) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= k.width as f64 && self.y1 <= k.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBoxPerturbation {
    /// Fraction of the box width (x edges) or height (y edges).
    pub magnitude: f64,
    pub seed: u64,
}

/// Moves each edge independently by `U(-m, m)` times the box width or
/// height, then clamps to the image.
pub fn perturb_bbox(bbox: &BBox, p: &BBoxPerturbation, k: &CameraIntrinsics) -> Result<BBox> {
    if !(0.0..=0.5).contains(&p.magnitude) {
        return Err(Error::InvalidArgument(format!(
            "perturbation magnitude {} outside [0, 0.5]",
            p.magnitude
        )));
    }
    if p.magnitude == 0.0 {
        return Ok(*bbox);
    }
    let mut rng = seed::rng(p.seed);
    let m = p.magnitude;
    let (w, h) = (bbox.width(), bbox.height());
    let mut draw = |scale: f64| rng.random_range(-m..=m) * scale;
    let (dx0, dy0, dx1, dy1) = (draw(w), draw(h), draw(w), draw(h));
    let (iw, ih) = (k.width as f64, k.height as f64);
    let out = BBox {
        x0: (bbox.x0 + dx0).clamp(0.0, iw),
        y0: (bbox.y0 + dy0).clamp(0.0, ih),
        x1: (bbox.x1 + dx1).clamp(0.0, iw),
        y1: (bbox.y1 + dy1).clamp(0.0, ih),
    };
    if out.width() < MIN_BOX_SIDE || out.height() < MIN_BOX_SIDE {
        return Err(Error::DegenerateBox {
            width: out.width(),
            height: out.height(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConePlacement {
    /// Base center in the ego frame, meters.
    pub position: Point3<f64>,
    pub color_class: ColorClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub cones: Vec<ConePlacement>,
    /// Ego frame to camera frame.
    pub camera_extrinsic: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

/// Forward-looking camera `height` meters above the ground, no pitch or roll.
pub fn default_extrinsic(height: f64) -> RigidTransform {
    // Rows are the camera axes (right, down, forward) in ego coordinates.
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    RigidTransform::new(r, -(r * Vector3::new(0.0, 0.0, height)))
}

/// Parameters for random scene generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub cones: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub intrinsics: CameraIntrinsics,
    pub camera_extrinsic: RigidTransform,
    pub seed: u64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        SceneLayout {
            cones: 104,
            depth_min: DEFAULT_DEPTH_RANGE.0,
            depth_max: DEFAULT_DEPTH_RANGE.1,
            intrinsics: CameraIntrinsics::default_synthetic(),
            camera_extrinsic: default_extrinsic(DEFAULT_CAMERA_HEIGHT),
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Places `layout.cones` cones with camera depth uniform in the depth
    /// range, fully visible (box included) and mutually separated.
    pub fn random(layout: &SceneLayout, model: &ConeModel) -> Result<SceneSpec> {
        if !(layout.depth_min > 0.0
            && layout.depth_max >= layout.depth_min
            && layout.depth_max <= MAX_CONE_DEPTH)
        {
            return Err(Error::InvalidArgument(format!(
                "depth range [{}, {}] must lie in (0, {MAX_CONE_DEPTH}]",
                layout.depth_min, layout.depth_max
            )));
        }
        layout.intrinsics.validate()?;
        let k = &layout.intrinsics;
        let cam_to_ego = layout.camera_extrinsic.inverse();
        let mut rng = seed::rng(seed::derive(layout.seed, seed::SCENE));
        let mut spec = SceneSpec {
            cones: Vec::with_capacity(layout.cones),
            camera_extrinsic: layout.camera_extrinsic,
            intrinsics: *k,
            seed: layout.seed,
        };
        let max_attempts = 1000 * layout.cones.max(1);
        let mut attempts = 0;
        while spec.cones.len() < layout.cones {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::InvalidArgument(format!(
                    "could only place {} of {} cones",
                    spec.cones.len(),
                    layout.cones
                )));
            }
            let depth = rng.random_range(layout.depth_min..=layout.depth_max);
            let half_fov = 0.45 * k.width as f64 / k.fx;
            let lateral = rng.random_range(-half_fov..=half_fov) * depth;
            let Some(position) = ground_point(&cam_to_ego, lateral, depth) else {
                continue;
            };
            let color_class = ColorClass::ALL[rng.random_range(0..3)];
            let placement = ConePlacement {
                position,
                color_class,
            };
            if spec
                .cones
                .iter()
                .any(|c| (c.position - position).norm() < MIN_CONE_SEPARATION)
            {
                continue;
            }
            let pose = cone_pose(&spec.camera_extrinsic, &position);
            match cone_image(k, &pose, model) {
                Some((_, bbox)) if bbox.inside(k) => spec.cones.push(placement),
                _ => continue,
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (i, c) in self.cones.iter().enumerate() {
            let depth = self.camera_extrinsic.apply(&c.position).z;
            if !(depth > 0.0 && depth <= MAX_CONE_DEPTH) {
                return Err(Error::InvalidArgument(format!(
                    "cone {i} has camera depth {depth}"
                )));
            }
            for other in &self.cones[..i] {
                if (other.position - c.position).norm() < MIN_CONE_SEPARATION {
                    return Err(Error::InvalidArgument(format!(
                        "cone {i} closer than {MIN_CONE_SEPARATION} m to another cone"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn camera_to_vehicle(&self) -> RigidTransform {
        self.camera_extrinsic.inverse()
    }

    pub fn to_toml(&self) -> String {
        let r = &self.camera_extrinsic.rotation;
        let file = SceneFile {
            seed: self.seed,
            intrinsics: self.intrinsics,
            extrinsic_rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            extrinsic_translation: self.camera_extrinsic.translation.into(),
            cones: self
                .cones
                .iter()
                .map(|c| ConeEntry {
                    position: c.position.coords.into(),
                    color_class: c.color_class,
                })
                .collect(),
        };
        toml::to_string(&file).expect("scene serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: SceneFile =
            toml::from_str(text).map_err(|e| Error::format("scene spec", e.to_string()))?;
        let rotation = Matrix3::from_fn(|i, j| f.extrinsic_rotation[i][j]);
        let spec = SceneSpec {
            cones: f
                .cones
                .iter()
                .map(|c| ConePlacement {
                    position: Point3::from(c.position),
                    color_class: c.color_class,
                })
                .collect(),
            camera_extrinsic: RigidTransform::new(rotation, f.extrinsic_translation.into()),
            intrinsics: f.intrinsics,
            seed: f.seed,
        };
        if !spec.camera_extrinsic.is_proper(1e-9) {
            return Err(Error::format(
                "scene spec",
                "extrinsic rotation is not proper",
            ));
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    intrinsics: CameraIntrinsics,
    extrinsic_rotation: [[f64; 3]; 3],
    extrinsic_translation: [f64; 3],
    cones: Vec<ConeEntry>,
}

#[derive(Serialize, Deserialize)]
struct ConeEntry {
    position: [f64; 3],
    color_class: ColorClass,
}

/// Ground point (ego z = 0) seen at camera-frame `(lateral, ·, depth)`.
fn ground_point(cam_to_ego: &RigidTransform, lateral: f64, depth: f64) -> Option<Point3<f64>> {
    // Ego z is affine in the camera y coordinate; solve for z = 0.
    let at = |y: f64| cam_to_ego.apply(&Point3::new(lateral, y, depth));
    let (p0, p1) = (at(0.0), at(1.0));
    let slope = p1.z - p0.z;
    if slope.abs() < 1e-9 {
        return None;
    }
    let mut p = at(-p0.z / slope);
    p.z = 0.0;
    Some(p)
}

/// Model-to-camera pose of an upright cone at ego `position`, with its
/// keypoint plane turned towards the camera center.
pub fn cone_pose(camera_extrinsic: &RigidTransform, position: &Point3<f64>) -> RigidTransform {
    let camera_center = camera_extrinsic.inverse().translation;
    let mut away = position.coords - camera_center;
    away.z = 0.0;
    let away = if away.norm() < 1e-9 {
        Vector3::x()
    } else {
        away.normalize()
    };
    let up = Vector3::z();
    let x_axis = away.cross(&up);
    let cone_to_ego =
        RigidTransform::new(Matrix3::from_columns(&[x_axis, away, up]), position.coords);
    camera_extrinsic.compose(&cone_to_ego)
}

/// Projected keypoints and margin box, or `None` when any keypoint is
/// behind the camera.
pub fn cone_image(
    k: &CameraIntrinsics,
    pose: &RigidTransform,
    model: &ConeModel,
) -> Option<([Point2<f64>; NUM_KEYPOINTS], BBox)> {
    let mut pts = [Point2::origin(); NUM_KEYPOINTS];
    for (dst, p) in pts.iter_mut().zip(&model.keypoints) {
        *dst = project(k, pose, p).ok()?;
    }
    let bbox = BBox::around(&pts, BBOX_MARGIN);
    Some((pts, bbox))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedCone {
    pub bbox: BBox,
    pub patch: Patch,
    /// Exact projections of the model keypoints, in patch coordinates.
    pub truth_keypoints: KeypointSet,
    /// Base center in the ego frame.
    pub truth_position: Point3<f64>,
    /// Base center in the camera frame.
    pub truth_camera: Point3<f64>,
    pub color_class: ColorClass,
    /// Index into the scene's cone list.
    pub cone_index: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub cones: Vec<RenderedCone>,
    /// Cones not fully inside the image (or behind the camera).
    pub skipped: usize,
}

/// Per-cone state needed to render pixels.
#[derive(Debug, Clone)]
pub struct ConeInstance {
    pub placement: ConePlacement,
    pub pose: RigidTransform,
    pub image_keypoints: [Point2<f64>; NUM_KEYPOINTS],
    pub bbox: BBox,
}

/// Procedural image of a scene, evaluated lazily per pixel. Each cone is
/// drawn alone over the background, so patches never contain neighbors.
#[derive(Debug, Clone)]
pub struct SceneRenderer {
    pub intrinsics: CameraIntrinsics,
    cam_to_ego: RigidTransform,
    seed: u64,
    instances: Vec<Option<ConeInstance>>,
}

impl SceneRenderer {
    pub fn new(spec: &SceneSpec, model: &ConeModel) -> Self {
        let instances = spec
            .cones
            .iter()
            .map(|c| {
                let pose = cone_pose(&spec.camera_extrinsic, &c.position);
                cone_image(&spec.intrinsics, &pose, model).map(|(image_keypoints, bbox)| {
                    ConeInstance {
                        placement: *c,
                        pose,
                        image_keypoints,
                        bbox,
                    }
                })
            })
            .collect();
        SceneRenderer {
            intrinsics: spec.intrinsics,
            cam_to_ego: spec.camera_extrinsic.inverse(),
            seed: seed::derive(spec.seed, "render"),
            instances,
        }
    }

    pub fn instance(&self, index: usize) -> Option<&ConeInstance> {
        self.instances.get(index).and_then(|i| i.as_ref())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Color of image pixel `(col, row)` with only cone `index` present.
    /// Pixels outside the image are black.
    pub fn pixel(&self, index: usize, col: i64, row: i64) -> [f32; 3] {
        let k = &self.intrinsics;
        if col < 0 || row < 0 || col >= k.width as i64 || row >= k.height as i64 {
            return [0.0; 3];
        }
        let center = Point2::new(col as f64 + 0.5, row as f64 + 0.5);
        let base = match self.instance(index).and_then(|c| cone_color(c, &center)) {
            Some(c) => c,
            None => self.background(&center),
        };
        let mut out = [0.0f32; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let jitter = (hash_unit(self.seed, col as u64, row as u64, ch as u64) - 0.5) * 0.06;
            *o = (base[ch] + jitter).clamp(0.0, 1.0) as f32;
        }
        out
    }

    fn background(&self, pixel: &Point2<f64>) -> [f64; 3] {
        let n = self.intrinsics.normalize(pixel);
        let ray = self.cam_to_ego.rotation * Vector3::new(n.x, n.y, 1.0);
        let origin = self.cam_to_ego.translation;
        if ray.z < -1e-9 && origin.z > 0.0 {
            let s = -origin.z / ray.z;
            let g = origin + ray * s;
            // Asphalt made of 0.25 m tiles with a coarser 2 m mottle.
            let tile = hash_unit(
                self.seed,
                (g.x / 0.25).floor() as i64 as u64,
                (g.y / 0.25).floor() as i64 as u64,
                7,
            );
            let mottle = hash_unit(
                self.seed,
                (g.x / 2.0).floor() as i64 as u64,
                (g.y / 2.0).floor() as i64 as u64,
                11,
            );
            let v = 0.28 + 0.08 * tile + 0.1 * mottle;
            [v, v, v * 1.02]
        } else {
            let elevation = (ray.z / ray.norm()).clamp(0.0, 1.0);
            [0.62 - 0.2 * elevation, 0.7 - 0.15 * elevation, 0.82]
        }
    }

    /// Resamples the image inside `bbox` (stretched) into an 80x80 patch
    /// with bilinear interpolation, quantized to 8 bits.
    pub fn render_patch(&self, index: usize, bbox: &BBox) -> Patch {
        let affine = bbox.patch_affine();
        let mut pixels = vec![0.0f32; PATCH_LEN];
        for row in 0..PATCH_SIZE {
            for col in 0..PATCH_SIZE {
                let q = affine.to_image(&Point2::new(col as f64 + 0.5, row as f64 + 0.5));
                let fx = q.x - 0.5;
                let fy = q.y - 0.5;
                let (x0, y0) = (fx.floor(), fy.floor());
                let (ax, ay) = (fx - x0, fy - y0);
                let mut acc = [0.0f64; 3];
                for (dy, wy) in [(0i64, 1.0 - ay), (1, ay)] {
                    for (dx, wx) in [(0i64, 1.0 - ax), (1, ax)] {
                        let w = wx * wy;
                        if w == 0.0 {
                            continue;
                        }
                        let v = self.pixel(index, x0 as i64 + dx, y0 as i64 + dy);
                        for c in 0..3 {
                            acc[c] += w * v[c] as f64;
                        }
                    }
                }
                let at = (row * PATCH_SIZE + col) * CHANNELS;
                for c in 0..3 {
                    pixels[at + c] = ((acc[c].clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32;
                }
            }
        }
        Patch::new(pixels, affine).expect("patch has the right size")
    }

    pub fn render_cone(&self, index: usize) -> Option<RenderedCone> {
        let inst = self.instance(index)?;
        if !inst.bbox.inside(&self.intrinsics) {
            return None;
        }
        let affine = inst.bbox.patch_affine();
        let truth_keypoints = KeypointSet {
            points: inst.image_keypoints.map(|p| affine.to_patch(&p)),
            patch_to_image: affine,
        };
        Some(RenderedCone {
            bbox: inst.bbox,
            patch: self.render_patch(index, &inst.bbox),
            truth_keypoints,
            truth_position: inst.placement.position,
            truth_camera: Point3::from(inst.pose.translation),
            color_class: inst.placement.color_class,
            cone_index: index,
        })
    }
}

/// Band color at an image point, or `None` outside the cone silhouette.
fn cone_color(cone: &ConeInstance, p: &Point2<f64>) -> Option<[f64; 3]> {
    let b = &cone.bbox;
    if p.x < b.x0 || p.x > b.x1 || p.y < b.y0 || p.y > b.y1 {
        return None;
    }
    let k = &cone.image_keypoints;
    let (body, stripe) = band_colors(cone.placement.color_class);
    if in_convex(p, &[k[0], k[1], k[4]]) {
        Some(body)
    } else if in_convex(p, &[k[1], k[2], k[5], k[4]]) {
        Some(stripe)
    } else if in_convex(p, &[k[2], k[3], k[6], k[5]]) {
        Some(body)
    } else {
        None
    }
}

fn band_colors(class: ColorClass) -> ([f64; 3], [f64; 3]) {
    match class {
        ColorClass::Blue => ([0.1, 0.22, 0.78], [0.93, 0.93, 0.93]),
        ColorClass::Yellow => ([0.96, 0.82, 0.1], [0.07, 0.07, 0.07]),
        ColorClass::Orange => ([0.97, 0.45, 0.06], [0.93, 0.93, 0.93]),
    }
}

/// Point-in-convex-polygon test, either winding.
fn in_convex(p: &Point2<f64>, poly: &[Point2<f64>]) -> bool {
    let mut sign = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

fn hash_unit(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    let h = seed::indexed(seed::indexed(seed::indexed(seed, a), b), c);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Renders every visible cone of the scene.
pub fn generate_scene(spec: &SceneSpec, model: &ConeModel) -> GeneratedScene {
    let renderer = SceneRenderer::new(spec, model);
    let rendered: Vec<Option<RenderedCone>> = (0..renderer.len())
        .into_par_iter()
        .map(|i| renderer.render_cone(i))
        .collect();
    let skipped = rendered.iter().filter(|r| r.is_none()).count();
    GeneratedScene {
        cones: rendered.into_iter().flatten().collect(),
        skipped,
    }
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SCENE_FILE: &str = "scene.toml";
const MANIFEST_MAGIC: &str = "# conepose-manifest v1";

/// Column order of the manifest, tab separated.
pub const MANIFEST_COLUMNS: [&str; 24] = [
    "patch",
    "x1",
    "y1",
    "x2",
    "y2",
    "x3",
    "y3",
    "x4",
    "y4",
    "x5",
    "y5",
    "x6",
    "y6",
    "x7",
    "y7",
    "bbox_x0",
    "bbox_y0",
    "bbox_x1",
    "bbox_y1",
    "pos_x",
    "pos_y",
    "pos_z",
    "color",
    "cone_index",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// Patch path relative to the dataset directory.
    pub patch_path: String,
    pub keypoints: KeypointSet,
    pub bbox: BBox,
    pub truth_position: Point3<f64>,
    pub color_class: ColorClass,
    pub cone_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<DatasetRecord>,
}

fn record_line(r: &DatasetRecord) -> String {
    let mut line = r.patch_path.clone();
    let b = &r.bbox;
    let p = &r.truth_position;
    let values = r
        .keypoints
        .to_flat()
        .into_iter()
        .chain([b.x0, b.y0, b.x1, b.y1, p.x, p.y, p.z]);
    for v in values {
        // `{}` on f64 prints the shortest representation that parses back exactly.
        write!(line, "\t{v}").expect("write to string");
    }
    write!(line, "\t{}\t{}", r.color_class, r.cone_index).expect("write to string");
    line
}

fn parse_record(line: &str) -> Result<DatasetRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != MANIFEST_COLUMNS.len() {
        return Err(Error::format(
            "manifest",
            format!(
                "expected {} fields, got {}",
                MANIFEST_COLUMNS.len(),
                fields.len()
            ),
        ));
    }
    let num = |i: usize| -> Result<f64> {
        fields[i]
            .parse()
            .map_err(|_| Error::format("manifest", format!("bad number {:?}", fields[i])))
    };
    let mut flat = [0.0; 14];
    for (i, v) in flat.iter_mut().enumerate() {
        *v = num(1 + i)?;
    }
    let bbox = BBox {
        x0: num(15)?,
        y0: num(16)?,
        x1: num(17)?,
        y1: num(18)?,
    };
    Ok(DatasetRecord {
        patch_path: fields[0].to_string(),
        keypoints: KeypointSet::from_flat(&flat, bbox.patch_affine()),
        bbox,
        truth_position: Point3::new(num(19)?, num(20)?, num(21)?),
        color_class: fields[22].parse()?,
        cone_index: fields[23]
            .parse()
            .map_err(|_| Error::format("manifest", "bad cone index"))?,
    })
}

/// Writes PNG patches under `dir/patches/` and the manifest `dir/manifest.tsv`.
pub fn write_dataset(cones: &[RenderedCone], dir: &Path) -> Result<Manifest> {
    let patch_dir = dir.join("patches");
    std::fs::create_dir_all(&patch_dir).map_err(|e| Error::io(&patch_dir, e))?;
    let records: Vec<DatasetRecord> = cones
        .iter()
        .enumerate()
        .map(|(i, c)| DatasetRecord {
            patch_path: format!("patches/{i:06}.png"),
            keypoints: c.truth_keypoints,
            bbox: c.bbox,
            truth_position: c.truth_position,
            color_class: c.color_class,
            cone_index: c.cone_index,
        })
        .collect();
    records
        .par_iter()
        .zip(cones)
        .try_for_each(|(r, c)| write_png(&dir.join(&r.patch_path), &c.patch))?;

    let path = dir.join(MANIFEST_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |s: &str| writeln!(w, "{s}").map_err(|e| Error::io(&path, e));
    emit(MANIFEST_MAGIC)?;
    emit(&format!("# {}", MANIFEST_COLUMNS.join("\t")))?;
    for r in &records {
        emit(&record_line(r))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(Manifest { path, records })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    let mut lines = std::io::BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(first)) if first == MANIFEST_MAGIC => {}
        _ => return Err(Error::format("manifest", "missing header")),
    }
    for line in lines {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        records.push(parse_record(&line)?);
    }
    Ok(Manifest { path, records })
}

pub fn write_png(path: &Path, patch: &Patch) -> Result<()> {
    let img = image::RgbImage::from_raw(PATCH_SIZE as u32, PATCH_SIZE as u32, patch.to_rgb8())
        .expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

pub fn read_png(path: &Path, patch_to_image: PatchAffine) -> Result<Patch> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    if rgb.dimensions() != (PATCH_SIZE as u32, PATCH_SIZE as u32) {
        return Err(Error::format(
            "patch image",
            format!("{:?}", rgb.dimensions()),
        ));
    }
    Patch::from_rgb8(rgb.as_raw(), patch_to_image)
}

/// Loads all patches referenced by a manifest.
pub fn load_patches(dir: &Path, manifest: &Manifest) -> Result<Vec<Patch>> {
    manifest
        .records
        .par_iter()
        .map(|r| read_png(&dir.join(&r.patch_path), r.bbox.patch_affine()))
        .collect()
}
