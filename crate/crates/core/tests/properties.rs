//! Randomized invariants over the public API.

use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

use rgbd_atlas::evaluation::{ate, overlap_rmse, ReconEvalConfig, Trajectory};
use rgbd_atlas::geometry::{estimate_normals, se3_compose, umeyama_align, CameraIntrinsics, DepthImage, PointCloud, Pose};
use rgbd_atlas::io::{decode_pgm16, decode_ply_points, encode_cloud_ply, encode_pgm16, format_trajectory, parse_trajectory};
use rgbd_atlas::pose_graph::{Edge, EdgeKind, PoseGraph};
use rgbd_atlas::synthetic::{look_along, render_depth, Primitive, Scene, Texture};

fn pose() -> impl Strategy<Value = Pose> {
    (
        proptest::array::uniform3(-3.0f64..3.0),
        proptest::array::uniform3(-5.0f64..5.0),
    )
        .prop_map(|(w, t)| {
            // rotation angle stays below pi so log is defined
            let w = Vector3::from(w) * 0.9;
            Pose::exp(&Vector6::new(w.x, w.y, w.z, t[0], t[1], t[2]))
        })
}

fn point(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    proptest::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    proptest::collection::vec(point(0.3), 1..max).prop_map(PointCloud::from_points)
}

fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
    let d = a.inverse().compose(b);
    d.translation().norm() < tol && d.angle() < tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let l = se3_compose(&se3_compose(&a, &b), &c);
        let r = se3_compose(&a, &se3_compose(&b, &c));
        prop_assert!((l.to_matrix() - r.to_matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn backproject_then_project_returns_the_pixel(
        u in 0usize..64, v in 0usize..48, z in 0.1f64..10.0, fov in 30.0f64..120.0
    ) {
        let k = CameraIntrinsics::from_fov(64, 48, fov);
        let p = k.backproject(u as f64, v as f64, z);
        let (pu, pv) = k.project(&p).unwrap();
        prop_assert!((pu - u as f64).abs() < 1e-9 && (pv - v as f64).abs() < 1e-9);
        prop_assert!((p.z - z).abs() < 1e-12);
    }

    #[test]
    fn umeyama_is_locally_optimal(
        pts in proptest::collection::vec(point(2.0), 4..40),
        truth in pose(),
        noise in proptest::collection::vec(point(0.05), 40),
        perturb in proptest::collection::vec(proptest::array::uniform6(-0.01f64..0.01), 100),
    ) {
        let dst: Vec<Vector3<f64>> = pts.iter().zip(&noise).map(|(p, n)| truth.transform_point(p) + n).collect();
        let fit = match umeyama_align(&pts, &dst) {
            Ok(f) => f,
            Err(_) => return Ok(()), // degenerate draw
        };
        let residual = |t: &Pose| -> f64 { pts.iter().zip(&dst).map(|(p, q)| (t.transform_point(p) - q).norm_squared()).sum() };
        let best = residual(&fit);
        for d in &perturb {
            let other = Pose::exp(&Vector6::from_column_slice(d)).compose(&fit);
            prop_assert!(best <= residual(&other) + 1e-9);
        }
    }

    #[test]
    fn overlap_grows_with_the_threshold(recon in cloud(120), gt in cloud(120)) {
        let cfg = ReconEvalConfig { voxel: 0.01, gammas: vec![0.005, 0.01, 0.02, 0.05, 0.2] };
        let r = overlap_rmse(&recon, &gt, &cfg).unwrap();
        for w in r.thresholds.windows(2) {
            prop_assert!(w[0].overlap <= w[1].overlap);
            prop_assert!(w[0].inliers <= w[1].inliers);
        }
    }

    #[test]
    fn ate_ignores_rigid_motion_of_either_trajectory(
        poses in proptest::collection::vec(pose(), 5..30),
        jitter in proptest::collection::vec(point(0.05), 30),
        g in pose(),
        h in pose(),
    ) {
        let gt: Vec<(f64, Pose)> = poses.iter().enumerate().map(|(i, p)| (i as f64, *p)).collect();
        let est: Vec<(f64, Pose)> = gt
            .iter()
            .zip(&jitter)
            .map(|((t, p), j)| (*t, Pose::from_translation(*j).compose(p)))
            .collect();
        let moved = |tr: &[(f64, Pose)], m: &Pose| Trajectory::new(tr.iter().map(|(t, p)| (*t, m.compose(p))).collect());
        let base = ate(&Trajectory::new(est.clone()), &Trajectory::new(gt.clone())).unwrap();
        let a = ate(&moved(&est, &g), &Trajectory::new(gt.clone())).unwrap();
        let b = ate(&Trajectory::new(est.clone()), &moved(&gt, &h)).unwrap();
        prop_assert!((a - base).abs() < 1e-9 && (b - base).abs() < 1e-9, "{base} {a} {b}");
    }

    #[test]
    fn trajectory_text_round_trip(poses in proptest::collection::vec(pose(), 0..20)) {
        let entries: Vec<(f64, Pose)> = poses.iter().enumerate().map(|(i, p)| (i as f64 / 30.0, *p)).collect();
        let back = parse_trajectory(&format_trajectory(&entries)).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for ((t0, p0), (t1, p1)) in entries.iter().zip(&back) {
            prop_assert!((t0 - t1).abs() < 1e-6);
            prop_assert!(close(p0, p1, 1e-8));
        }
        // formatting is a fixed point after one round trip
        prop_assert_eq!(format_trajectory(&back), format_trajectory(&parse_trajectory(&format_trajectory(&back)).unwrap()));
    }

    #[test]
    fn depth_image_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u16> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1).rotate_left(17) & 0xffff) as u16).collect();
        let d = DepthImage::new(w, h, data).unwrap();
        prop_assert_eq!(decode_pgm16(&encode_pgm16(&d)).unwrap(), d);
    }

    #[test]
    fn cloud_ply_round_trip(c in cloud(200)) {
        let back = decode_ply_points(&encode_cloud_ply(&c)).unwrap();
        prop_assert_eq!(back.len(), c.len());
        for (a, b) in c.points.iter().zip(&back.points) {
            prop_assert!((a - b).abs().max() <= 1e-7);
        }
    }

    #[test]
    fn graph_text_round_trip(poses in proptest::collection::vec(pose(), 2..12), w in 0.1f64..1e5) {
        let mut g = PoseGraph::new();
        for (i, p) in poses.iter().enumerate() {
            g.add_node(i as u64 * 3, *p, (i % 2) as u32).unwrap();
        }
        for i in 1..poses.len() {
            let (a, b) = ((i as u64 - 1) * 3, i as u64 * 3);
            let mut info = nalgebra::Matrix6::identity() * w;
            info[(0, 5)] = 0.25 * w;
            info[(5, 0)] = 0.25 * w;
            g.add_edge(Edge {
                from: a,
                to: b,
                relative: poses[i - 1].inverse().compose(&poses[i]),
                information: info,
                kind: if i % 3 == 0 { EdgeKind::Loop } else { EdgeKind::Odometry },
            })
            .unwrap();
        }
        let text = g.to_text();
        let back = PoseGraph::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.anchor, g.anchor);
        prop_assert_eq!(back.edges.len(), g.edges.len());
        for (id, n) in &g.nodes {
            prop_assert!(close(&n.pose, &back.nodes[id].pose, 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rendered_plane_normals_are_accurate(
        tilt in -60.0f64..60.0,
        yaw in -60.0f64..60.0,
        dist in 1.0f64..3.0,
    ) {
        let (t, y) = (tilt.to_radians(), yaw.to_radians());
        let normal = Vector3::new(y.sin() * t.cos(), -y.cos() * t.cos(), t.sin()).normalize();
        let scene = Scene::new(
            vec![Primitive::Plane { point: Vector3::zeros(), normal, half_size: 50.0 }],
            Texture::default(),
        )
        .unwrap();
        // camera on the +normal side looking straight at the plane origin
        let cam = look_along(normal * dist, &-normal);
        let k = CameraIntrinsics::from_fov(64, 48, 70.0);
        let depth = render_depth(&scene, &cam, &k);
        let nm = estimate_normals(&depth, &k);
        let expected = cam.inverse().rotate(&normal);
        let mut checked = 0;
        for v in 2..46 {
            for u in 2..62 {
                if let Some(n) = nm.get(u, v) {
                    prop_assert!(n.dot(&expected).clamp(-1.0, 1.0).acos().to_degrees() < 1.0, "({u},{v}) {n:?} vs {expected:?}");
                    checked += 1;
                }
            }
        }
        prop_assert!(checked > 2000);
    }
}
