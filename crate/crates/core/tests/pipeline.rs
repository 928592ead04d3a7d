use ifr_core::eval::{rre, rte};
use ifr_core::{
    generate_shape, icp_register, read_cloud, register, write_cloud, CloudFormat, IcpConfig, IfrConfig,
    ShapeKind, Twist, Vec3,
};

#[test]
fn file_round_trip_then_register() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = generate_shape(ShapeKind::Composite, 2048, 11).unwrap();
    let truth = Twist::new(Vec3::new(0.05, -0.1, 0.08), Vec3::new(0.2, -0.15, 0.3)).exp();
    let moved = cloud.transformed(&truth);

    let src_path = dir.path().join("source.ply");
    let tgt_path = dir.path().join("target.bin");
    write_cloud(&cloud, &src_path, None).unwrap();
    write_cloud(&moved, &tgt_path, Some(CloudFormat::KittiBin)).unwrap();
    let source = read_cloud(&src_path, None).unwrap();
    let target = read_cloud(&tgt_path, None).unwrap();
    assert_eq!(source.len(), 2048);
    assert_eq!(target.len(), 2048);

    let report = register(&source.points, &target.points, &IfrConfig::synthetic()).unwrap();
    assert!(report.converged);
    assert!(rre(&report.transform, &truth) < 0.05, "{}", rre(&report.transform, &truth));
    assert!(rte(&report.transform, &truth) < 1e-3);

    let icp = icp_register(&source.points, &target.points, &IcpConfig::default()).unwrap();
    let start = rre(&ifr_core::RigidTransform::identity(), &truth);
    assert!(rre(&icp.transform, &truth) < start);
}
