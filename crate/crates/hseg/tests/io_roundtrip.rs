use std::fs;

use hseg::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Header};
use hseg::guides_file::{load_guides, save_guides, GuidesFile};
use hseg::png_io::{load_image, load_labels, save_image, save_labels};
use hseg::Error;
use hseg_core::autodiff::AdamState;
use hseg_core::guides::GuideSet;
use hseg_core::network::{SinUNet, SinUNetConfig, TrainConfig};
use hseg_core::{Image, LabelMap};
use proptest::prelude::*;

fn write_gray(path: &std::path::Path, w: u32, h: u32, depth: png::BitDepth, data: &[u8]) {
    let file = fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    enc.write_header().unwrap().write_image_data(data).unwrap();
}

#[test]
fn all_background_map_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.png");
    let map = LabelMap::new(7, 5);
    save_labels(&map, &p).unwrap();
    assert_eq!(load_labels(&p).unwrap(), map);
}

#[test]
fn eight_bit_label_maps_are_widened() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("l8.png");
    write_gray(&p, 3, 2, png::BitDepth::Eight, &[0, 1, 2, 255, 0, 7]);
    let map = load_labels(&p).unwrap();
    assert_eq!(map.data(), &[0, 1, 2, 255, 0, 7]);
}

#[test]
fn ids_beyond_sixteen_bits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let map = LabelMap::from_vec(2, 1, vec![1, 70_000]).unwrap();
    let err = save_labels(&map, &dir.path().join("big.png")).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_png_is_a_data_error() {
    let err = load_labels(std::path::Path::new("/nonexistent/x.png")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eight_bit_images_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.png");
    let data: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
    let img = Image::from_vec(4, 3, 1, data).unwrap();
    save_image(&img, &p).unwrap();
    assert_eq!(load_image(&p).unwrap(), img);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn label_maps_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u32> = (0..w * h).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) % 65_536) as u32).collect();
        let map = LabelMap::from_vec(w, h, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_labels(&map, &p).unwrap();
        prop_assert_eq!(load_labels(&p).unwrap(), map);
    }
}

fn small_checkpoint() -> (Checkpoint, GuideSet) {
    let guides = GuideSet::random(3, 0.5, (0.0, 10.0), 1).unwrap();
    let net = SinUNetConfig {
        depth: 1,
        base_channels: 4,
        embedding_dim: 3,
        tile: (8, 8),
        ..SinUNetConfig::default()
    };
    let model = SinUNet::new(net.clone(), 5).unwrap();
    let mut adam = AdamState::new(model.params());
    adam.step = 17;
    for (i, m) in adam.m.iter_mut().enumerate() {
        m.data_mut().iter_mut().for_each(|v| *v = i as f32 * 0.25);
    }
    let ck = Checkpoint {
        header: Header {
            network: net,
            train: TrainConfig::default(),
            epoch: 3,
            adam_step: 17,
            seed: 9,
        },
        guide_digest: guides.digest(),
        model,
        adam,
    };
    (ck, guides)
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let (ck, _) = small_checkpoint();
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.header, ck.header);
    assert_eq!(back.guide_digest, ck.guide_digest);
    assert_eq!(back.model.params(), ck.model.params());
    assert_eq!(back.adam.m, ck.adam.m);
    assert_eq!(back.adam.v, ck.adam.v);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&ck, &p).unwrap();
    assert_eq!(fs::read(&p).unwrap(), bytes);
    assert_eq!(load_checkpoint(&p).unwrap().to_bytes(), bytes);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (ck, _) = small_checkpoint();
    let bytes = ck.to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad_magic).is_err());
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    assert!(Checkpoint::from_bytes(&bad_version).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(Checkpoint::from_bytes(&trailing).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ckpt");
    fs::write(&p, &bytes[..40]).unwrap();
    assert_eq!(load_checkpoint(&p).err().unwrap().exit_code(), 2);
}

#[test]
fn guide_files_round_trip() {
    let (_, guides) = small_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.json");
    save_guides(&GuidesFile::new(&guides, 4), &p).unwrap();
    let back = load_guides(&p).unwrap().guide_set().unwrap();
    assert_eq!(back, guides);
    assert_eq!(back.digest(), guides.digest());
}
