use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;

type Mat4 = [[f64; 4]; 4];

fn apply(m: &Mat4, p: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| (0..4).map(|k| m[i][k] * p[k]).sum())
}

fn translation(t: [f64; 3]) -> Mat4 {
    [[1.0, 0.0, 0.0, t[0]], [0.0, 1.0, 0.0, t[1]], [0.0, 0.0, 1.0, t[2]], [0.0, 0.0, 0.0, 1.0]]
}

fn rotation(axis: Axis, a: f64) -> Mat4 {
    let (s, c) = a.sin_cos();
    match axis {
        Axis::X => [[1.0, 0.0, 0.0, 0.0], [0.0, c, -s, 0.0], [0.0, s, c, 0.0], [0.0, 0.0, 0.0, 1.0]],
        Axis::Y => [[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]],
        Axis::Z => [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
    }
}

/// Tool point via explicit 4x4 matrices applied right-to-left.
fn oracle_tool_point(params: &SimParams, q: &[f64; 6], base: &BaseState) -> [f64; 3] {
    let mut chain: Vec<Mat4> = vec![
        translation([base.position[0], base.position[1], params.plant.nominal_height + base.height_offset]),
        rotation(Axis::Z, base.yaw),
        rotation(Axis::Y, base.pitch),
        translation(params.arm.mount),
    ];
    for (i, j) in params.arm.joints.iter().enumerate() {
        chain.push(translation(j.origin));
        chain.push(rotation(j.axis, q[i]));
    }
    let mut p = [params.arm.tool[0], params.arm.tool[1], params.arm.tool[2], 1.0];
    for m in chain.iter().rev() {
        p = apply(m, p);
    }
    [p[0], p[1], p[2]]
}

fn random_q(rng: &mut impl Rng, params: &ArmParams) -> [f64; 6] {
    std::array::from_fn(|i| rng.random_range(params.joints[i].lower..=params.joints[i].upper))
}

fn test_world(params: &SimParams) -> WorldState {
    let object = ObjectState::upright(Shape::Cylinder, 0.06, 0.10, 0.83, [0.9, 0.0], 0.6, 0.0, Support::PickTable);
    WorldState::new(
        params,
        BaseState::default(),
        ArmState::at_rest(params.arm.nominal),
        object,
        TableSpec::new([0.9, 0.0], 0.6),
        TableSpec::new([-0.9, 0.5], 0.9),
    )
}

fn hold(world: &WorldState) -> ArmCommand {
    ArmCommand { targets: world.arm.positions, gripper: world.gripper.mode }
}

#[test]
fn zero_pose_is_home_offset() {
    let params = SimParams::default();
    let ee = forward_kinematics(&params, &ArmState::at_rest([0.0; 6]), &BaseState::default());
    let expected = params.arm.home_offset() + Vector3::new(0.0, 0.0, params.plant.nominal_height);
    assert!((ee.translation.vector - expected).norm() < 1e-12);
    assert!(ee.rotation.angle() < 1e-12);
}

#[test]
fn base_yaw_joint_rotates_home_offset() {
    let params = SimParams::default();
    let mut q = [0.0; 6];
    q[0] = FRAC_PI_2;
    let ee = forward_kinematics(&params, &ArmState::at_rest(q), &BaseState::default());
    // Joint 0 sits on the mount: rotate the part of the chain beyond it.
    let mount = Vector3::from(params.arm.mount) + Vector3::new(0.0, 0.0, params.plant.nominal_height);
    let distal = params.arm.home_offset() - Vector3::from(params.arm.mount);
    let rotated = Vector3::new(-distal.y, distal.x, distal.z);
    assert!((ee.translation.vector - (mount + rotated)).norm() < 1e-12);
}

#[test]
fn forward_kinematics_matches_reverse_matrix_chain() {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2000 {
        let q = random_q(&mut rng, &params.arm);
        let base = BaseState {
            position: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            yaw: rng.random_range(-3.2..3.2),
            height_offset: rng.random_range(-0.2..0.0),
            pitch: rng.random_range(-0.28..0.28),
            ..Default::default()
        };
        let ee = forward_kinematics(&params, &ArmState::at_rest(q), &base);
        let oracle = oracle_tool_point(&params, &q, &base);
        let diff = (ee.translation.vector - Vector3::from(oracle)).norm();
        assert!(diff < 1e-9, "diff {diff}");
    }
}

#[test]
fn joint_tracking_settles_on_target_without_payload() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    let targets = [0.3, -0.5, 1.2, 0.2, -0.4, 0.7];
    let cmd = ArmCommand { targets, gripper: GripperMode::Open };
    for _ in 0..300 {
        w = w.step(&params, &BaseCommand::default(), &cmd).unwrap();
    }
    for i in 0..6 {
        assert!((w.arm.positions[i] - targets[i]).abs() < 1e-4, "joint {i}");
    }
}

#[test]
fn payload_sags_loaded_joints() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    w.arm.flange_payload = 2.0;
    let targets = [0.0, 0.0, 0.5, 0.0, 0.0, 0.0];
    let cmd = ArmCommand { targets, gripper: GripperMode::Open };
    for _ in 0..400 {
        w = w.step(&params, &BaseCommand::default(), &cmd).unwrap();
    }
    // The shoulder droops (positive pitch points down).
    assert!(w.arm.positions[1] > targets[1] + 0.01);
}

#[test]
fn rigid_attachment_follows_translation() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    w.object.center = w.ee_position() + Vector3::new(0.01, 0.0, 0.0);
    w.object.support = Support::PickTable;
    w.gripper.mode = GripperMode::Open;
    w.try_grasp(&params);
    assert!(w.gripper.attachment.is_none(), "gripper must be closed by step, not by try_grasp alone");
    let mut closed = w.clone();
    closed.gripper.mode = GripperMode::Closed;
    closed.try_grasp(&params);
    assert!(closed.gripper.is_attached());

    // Translate the base by 0.1 m along x with the arm fixed.
    let before_obj = closed.object.center;
    let before_ee = closed.ee_position();
    let mut moved = closed.clone();
    moved.base.position[0] += 0.1;
    moved.ee = forward_kinematics(&params, &moved.arm, &moved.base);
    moved.update_object(&params);
    let d_ee = moved.ee_position() - before_ee;
    let d_obj = moved.object.center - before_obj;
    assert!((d_ee - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    assert!((d_obj - d_ee).norm() < 1e-12);
}

#[test]
fn grasp_examples() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    w.object.center = w.ee_position();
    w.gripper.mode = GripperMode::Closed;
    let mut exact = w.clone();
    exact.try_grasp(&params);
    assert!(exact.gripper.is_attached());

    let mut far = w.clone();
    far.object.center = w.ee_position() + Vector3::new(0.10, 0.0, 0.0);
    far.try_grasp(&params);
    assert!(!far.gripper.is_attached());

    let mut fast = w.clone();
    fast.ee_velocity = Vector3::new(0.5, 0.0, 0.0);
    fast.try_grasp(&params);
    assert!(!fast.gripper.is_attached());
    // A moderate closing speed still passes the gate.
    let mut dynamic = w.clone();
    dynamic.ee_velocity = Vector3::new(0.2, 0.0, 0.0);
    dynamic.try_grasp(&params);
    assert!(dynamic.gripper.is_attached());
}

#[test]
fn failed_close_shoves_object() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    w.object.center = w.ee_position() + Vector3::new(0.01, 0.0, 0.0);
    w.ee_velocity = Vector3::new(0.5, 0.0, 0.0);
    w.gripper.mode = GripperMode::Closed;
    let before = w.object.center;
    w.try_grasp(&params);
    assert!(!w.gripper.is_attached());
    assert!(((w.object.center - before).x - 0.05).abs() < 1e-12);
}

#[test]
fn grasp_gate_matches_brute_force_grid() {
    let params = SimParams::default();
    let base = test_world(&params);
    let mut mismatches = 0;
    for i in 0..50 {
        for j in 0..50 {
            let distance = 0.1 * i as f64 / 49.0;
            let speed = 0.6 * j as f64 / 49.0;
            let expected = distance <= 0.03 && speed <= 0.3;
            let mut w = base.clone();
            w.object.center = w.ee_position() + Vector3::new(0.0, distance, 0.0);
            w.ee_velocity = Vector3::new(0.0, 0.0, speed);
            w.gripper.mode = GripperMode::Closed;
            w.try_grasp(&params);
            if w.gripper.is_attached() != expected || grasp_gate(distance, speed, &params.grasp) != expected {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn placement_examples() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    let table = w.place_table.clone();
    w.object = ObjectState::upright(
        Shape::Cylinder,
        0.06,
        0.10,
        0.83,
        [table.center[0] + 0.04, table.center[1]],
        table.height,
        0.0,
        Support::PlaceTable,
    );
    assert_eq!(w.check_placement(&params), Placement::PlacedUpright);

    let mut tilted = w.clone();
    tilted.object.orientation = UnitQuaternion::from_euler_angles(std::f64::consts::FRAC_PI_4, 0.0, 0.0);
    assert_eq!(tilted.check_placement(&params), Placement::PlacedTipped);

    let mut held = w.clone();
    held.object.center.z += 0.2;
    held.object.support = Support::Gripper;
    assert_eq!(held.check_placement(&params), Placement::NotPlaced);

    let mut touching = w.clone();
    touching.object.center.z += 0.005;
    touching.object.support = Support::Gripper;
    assert_eq!(touching.check_placement(&params), Placement::PlacedUpright);

    let mut outside = w.clone();
    outside.object.center.x += 0.08;
    assert_eq!(outside.check_placement(&params), Placement::NotPlaced);
}

#[test]
fn contact_force_examples() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    let t = w.pick_table.clone();
    let place_at = |w: &mut WorldState, p: Vector3<f64>| {
        w.ee = Isometry3::from_parts(p.into(), w.ee.rotation);
    };
    place_at(&mut w, Vector3::new(t.center[0], t.center[1], t.height + 0.2));
    assert_eq!(w.ee_table_contact_force(&params), 0.0);

    let depth = 0.01;
    place_at(&mut w, Vector3::new(t.center[0], t.center[1], t.height + params.contact.clearance - depth));
    let f = w.ee_table_contact_force(&params);
    assert!((f - params.contact.stiffness * depth).abs() < 1e-9);

    place_at(&mut w, Vector3::new(t.center[0] + 0.15, t.center[1], t.height));
    assert_eq!(w.ee_table_contact_force(&params), 0.0);
}

#[test]
fn released_object_falls_and_settles_on_place_table() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    let table = w.place_table.clone();
    w.object.center = Vector3::new(table.center[0], table.center[1], table.height + 0.05 + 0.004);
    w.object.support = Support::Falling;
    w.object.velocity = Vector3::zeros();
    for _ in 0..20 {
        w = w.step(&params, &BaseCommand::default(), &hold(&w)).unwrap();
    }
    assert_eq!(w.object.support, Support::PlaceTable);
    assert_eq!(w.check_placement(&params), Placement::PlacedUpright);
    assert!((w.object.bottom().z - table.height).abs() < 1e-12);
}

#[test]
fn object_off_table_reaches_floor() {
    let params = SimParams::default();
    let mut w = test_world(&params);
    w.object.center = Vector3::new(3.0, 3.0, 1.0);
    w.object.support = Support::Falling;
    for _ in 0..100 {
        w = w.step(&params, &BaseCommand::default(), &hold(&w)).unwrap();
    }
    assert_eq!(w.object.support, Support::Floor);
}

#[test]
fn nan_command_is_rejected() {
    let params = SimParams::default();
    let w = test_world(&params);
    let cmd = BaseCommand { v_x: f64::NAN, ..Default::default() };
    assert!(matches!(w.step(&params, &cmd, &hold(&w)), Err(Error::NonFinite(_))));
}

#[test]
fn stepping_is_deterministic() {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut a = test_world(&params);
    a.arm.flange_payload = 1.5;
    let mut b = a.clone();
    for _ in 0..500 {
        let cmd = BaseCommand {
            v_x: rng.random_range(-1.0..2.0),
            v_y: rng.random_range(-1.0..1.0),
            yaw_rate: rng.random_range(-1.0..1.0),
            height_offset: rng.random_range(-0.2..0.0),
            pitch: rng.random_range(-0.28..0.28),
        };
        let arm = ArmCommand { targets: random_q(&mut rng, &params.arm), gripper: GripperMode::Open };
        a = a.step(&params, &cmd, &arm).unwrap();
        b = b.step(&params, &cmd, &arm).unwrap();
    }
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn limits_hold_over_many_random_steps() {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut w = test_world(&params);
    w.arm.flange_payload = 2.0;
    for n in 0..100_000 {
        if n % 50 == 0 {
            w.arm.flange_payload = rng.random_range(0.0..2.0);
        }
        let cmd = BaseCommand {
            v_x: rng.random_range(-3.0..3.0),
            v_y: rng.random_range(-3.0..3.0),
            yaw_rate: rng.random_range(-3.0..3.0),
            height_offset: rng.random_range(-0.5..0.3),
            pitch: rng.random_range(-1.0..1.0),
        };
        let arm = ArmCommand { targets: random_q(&mut rng, &params.arm), gripper: GripperMode::Open };
        w = w.step(&params, &cmd, &arm).unwrap();
        assert!(w.base.within_limits(), "step {n}: {:?}", w.base);
        for (i, j) in params.arm.joints.iter().enumerate() {
            assert!(w.arm.positions[i] >= j.lower && w.arm.positions[i] <= j.upper);
        }
    }
}

#[test]
fn kinetic_energy_never_grows_without_commands() {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let mut w = test_world(&params);
        w.base = BaseState {
            v_x: rng.random_range(-1.0..2.0),
            v_y: rng.random_range(-1.0..1.0),
            yaw_rate: rng.random_range(-1.0..1.0),
            height_offset: rng.random_range(-0.2..0.0),
            pitch: rng.random_range(-0.28..0.28),
            roll_rate: rng.random_range(-1.0..1.0),
            ..Default::default()
        };
        // Rates of the posture lags are consistent from the first step on.
        w = w.step(&params, &BaseCommand::default(), &hold(&w)).unwrap();
        let mut energy = w.base.kinetic_energy();
        for _ in 0..300 {
            w = w.step(&params, &BaseCommand::default(), &hold(&w)).unwrap();
            let e = w.base.kinetic_energy();
            assert!(e <= energy + 1e-12, "{e} > {energy}");
            energy = e;
        }
    }
}

proptest! {
    #[test]
    fn attached_object_stays_rigid(
        seed in 0u64..1000,
        steps in 1usize..200,
    ) {
        let params = SimParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = test_world(&params);
        w.object.center = w.ee_position() + Vector3::new(0.0, 0.01, -0.01);
        w.gripper.mode = GripperMode::Closed;
        w.try_grasp(&params);
        prop_assert!(w.gripper.is_attached());
        let offset = w.gripper.attachment.as_ref().unwrap().offset;
        for _ in 0..steps {
            let cmd = BaseCommand {
                v_x: rng.random_range(-1.0..2.0),
                yaw_rate: rng.random_range(-1.0..1.0),
                pitch: rng.random_range(-0.28..0.28),
                ..Default::default()
            };
            let arm = ArmCommand { targets: random_q(&mut rng, &params.arm), gripper: GripperMode::Closed };
            w = w.step(&params, &cmd, &arm).unwrap();
            let err = (w.object.center - w.ee_position()) - w.ee.rotation * offset;
            prop_assert!(err.norm() <= 1e-9);
        }
    }
}
