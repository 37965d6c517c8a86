use std::fs;

use eigenpatch::boxes::BBox;
use eigenpatch::data::{gen_synthetic, load_dataset, read_manifest, write_dataset, Scene, Split, SynthConfig};
use eigenpatch::diffmath::Tensor;
use eigenpatch::imageio;
use eigenpatch::Error;

#[test]
fn synthetic_dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let scenes = gen_synthetic(5, &cfg, 21).unwrap();
    let tagged: Vec<(Scene, Split)> = scenes
        .iter()
        .cloned()
        .zip([Split::Train, Split::Train, Split::Val, Split::Attack, Split::Test])
        .collect();
    write_dataset(dir.path(), &tagged).unwrap();
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.len(), 5);
    assert_eq!(manifest[3].1, Split::Attack);

    let loaded = load_dataset(dir.path(), cfg.size).unwrap();
    for ((a, sa), (b, sb)) in tagged.iter().zip(&loaded) {
        assert_eq!(sa, sb);
        assert_eq!(a.id, b.id);
        // images are quantized to 8 bits at generation time
        assert_eq!(a.image, b.image);
        assert_eq!(a.gt.len(), b.gt.len());
        for (x, y) in a.gt.iter().zip(&b.gt) {
            assert!(x.iou(y) > 1.0 - 1e-9);
        }
    }
}

#[test]
fn non_square_images_are_letterboxed_with_boxes() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("images")).unwrap();
    fs::create_dir_all(dir.path().join("labels")).unwrap();
    let (w, h) = (200, 100);
    let img = Tensor::full(&[3, h, w], 0.2);
    imageio::save_png(&img, &dir.path().join("images/wide.png")).unwrap();
    // box (50..150, 25..75) in source pixels
    fs::write(dir.path().join("labels/wide.txt"), "0.5 0.5 0.5 0.5\n").unwrap();
    fs::write(dir.path().join("manifest.txt"), "wide test\n").unwrap();

    let loaded = load_dataset(dir.path(), 80).unwrap();
    let (scene, split) = &loaded[0];
    assert_eq!(*split, Split::Test);
    assert_eq!(scene.image.shape(), [3, 80, 80]);
    assert_eq!(scene.image.at3(0, 0, 40), 0.5);
    assert!((scene.image.at3(0, 40, 40) - 51.0 / 255.0).abs() < 1e-12);
    let expect = BBox::new(20.0, 30.0, 60.0, 50.0).unwrap();
    assert!(scene.gt[0].iou(&expect) > 1.0 - 1e-9, "{:?}", scene.gt[0]);
}

#[test]
fn malformed_label_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = gen_synthetic(1, &SynthConfig::default(), 2).unwrap();
    let id = scenes[0].id.clone();
    write_dataset(dir.path(), &[(scenes[0].clone(), Split::Test)]).unwrap();
    fs::write(dir.path().join(format!("labels/{id}.txt")), "0.5 0.5 0.1 0.1\n\n0.5 0.5 0.1\n").unwrap();
    match load_dataset(dir.path(), 160) {
        Err(Error::Text { path, line, .. }) => {
            assert_eq!(line, 3);
            assert!(path.ends_with(format!("{id}.txt")));
        }
        other => panic!("expected a text error, got {other:?}"),
    }
}
