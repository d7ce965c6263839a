// Writes a tiny IDX image/label pair and loads it back.

use ssbnn::data::load_idx;

fn idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend(payload);
    out
}

fn run_example() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 2 * 2).map(|i| (i * 20) as u8).collect();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    std::fs::write(&images, idx(0x803, &[3, 2, 2], &pixels)).unwrap();
    std::fs::write(&labels, idx(0x801, &[3], &[0, 2, 1])).unwrap();

    let ds = load_idx(&images, &labels).unwrap();
    println!("{} images, grid {:?}, classes {}", ds.len(), ds.grid, ds.num_classes);
    println!("first row {:?}", ds.inputs.row(0));
    assert_eq!(ds.labels().unwrap(), &[0, 2, 1]);
    assert!((ds.inputs.get2(2, 3) - 220.0 / 255.0).abs() < 1e-12);
}

fn main() {
    run_example();
}
