use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::grad::{ParamStore, Tape, Tensor};
use crate::meshcore::{ColumnStats, FieldSample, Mesh, NormStats};
use crate::mpnn::{Centering, LayerKind, MlpBlock};
use crate::testutil::{check_store_grads, random, randomize_biases};

const KINDS: [LayerKind; 4] = [
    LayerKind::Gcn,
    LayerKind::Sage,
    LayerKind::Gin,
    LayerKind::Mgn,
];

fn shifted_grid(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Mesh {
    let base = Mesh::unit_square_grid(nx, ny).unwrap();
    let pos = base
        .positions()
        .data()
        .iter()
        .map(|v| v + rng.random_range(-0.1..0.1))
        .collect();
    Mesh::new(Tensor::matrix(nx * ny, 2, pos), base.edges().to_vec()).unwrap()
}

/// Mesh 0: 2×2 LR grid, 1: 3×2 HR grid, 2: perturbed 3×2 HR, 3: perturbed 2×2 LR.
fn fixture() -> (MeshBank, Vec<FieldSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let meshes = vec![
        Mesh::unit_square_grid(2, 2).unwrap(),
        Mesh::unit_square_grid(3, 2).unwrap(),
        shifted_grid(3, 2, &mut rng),
        shifted_grid(2, 2, &mut rng),
    ];
    let samples: Vec<FieldSample> = [0, 1, 2, 3, 0, 3]
        .iter()
        .map(|&m| FieldSample {
            mesh_id: m,
            values: random(&mut rng, meshes[m].n_nodes(), 1),
            mu: vec![],
        })
        .collect();
    let stats = NormStats {
        field: ColumnStats {
            mean: vec![0.1],
            std: vec![0.8],
        },
        position: ColumnStats::from_rows(2, meshes.iter().map(Mesh::positions)),
        edge: ColumnStats::identity(4),
    };
    (MeshBank::new(meshes, stats), samples)
}

fn small_arch(kind: LayerKind) -> ArchConfig {
    ArchConfig {
        kind,
        centering: if kind == LayerKind::Gcn {
            Centering {
                node: true,
                message: false,
            }
        } else {
            Centering::BOTH
        },
        hidden: 4,
        lr_layers: 1,
        hr_layers: 1,
        ..ArchConfig::default()
    }
}

fn randomize_all(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    randomize_biases(&mut params.store, rng);
    for block in [&params.decoder_f, &params.decoder_g] {
        let w = block.layers().last().unwrap().weight;
        let t = params.store.get(w);
        let fresh = random(rng, t.rows(), t.cols());
        *params.store.get_mut(w) = fresh;
    }
}

#[test]
fn zero_decoder_is_knn_baseline() {
    let (bank, samples) = fixture();
    for kind in KINDS {
        let params = ModelParams::new(small_arch(kind), 1).unwrap();
        let lr = &samples[0];
        let pred = params.predict(&bank, lr, 2).unwrap();
        assert_eq!(pred, knn_baseline(&bank, lr, 2, 3).unwrap());
        let same = params.predict(&bank, lr, 0).unwrap();
        assert_eq!(same, bank.field(lr).unwrap());
    }
}

#[test]
fn degenerate_extractor_returns_encoding() {
    let (bank, samples) = fixture();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let encoder = MlpBlock::new(&mut store, &mut rng, "enc", &[3, 3], false).unwrap();
    *store.get_mut(encoder.layers()[0].weight) = Tensor::identity(3);
    let ex = SharedExtractor {
        encoder,
        edge_encoder: None,
        lr_layers: vec![],
        hr_layers: vec![],
        k: 3,
    };
    let lr = &samples[0];
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let latent = ex.extract(&mut tape, &p, &bank, lr, lr.mesh_id).unwrap();
    assert_eq!(tape.value(latent), &bank.node_features(lr).unwrap());
}

#[test]
fn extractor_is_equivariant_to_hr_relabeling() {
    let (bank, samples) = fixture();
    let hr = bank.mesh(2).unwrap().clone();
    let perm = [3usize, 0, 5, 1, 4, 2];
    let mut pos = Tensor::zeros(6, 2);
    for i in 0..6 {
        pos.row_mut(perm[i]).copy_from_slice(hr.position(i));
    }
    let mut edges: Vec<(usize, usize)> = hr
        .edges()
        .iter()
        .map(|&(a, b)| (perm[a], perm[b]))
        .collect();
    edges.reverse();
    let mut meshes = bank.meshes().to_vec();
    meshes.push(Mesh::new(pos, edges).unwrap());
    let bank2 = MeshBank::new(meshes, bank.stats().clone());
    for kind in KINDS {
        let params = ModelParams::new(small_arch(kind), 3).unwrap();
        let latent = |b: &MeshBank, mesh: usize| {
            let mut tape = Tape::new();
            let p = params.bind_frozen(&mut tape);
            let v = params.extract(&mut tape, &p, b, &samples[0], mesh).unwrap();
            tape.value(v).clone()
        };
        let a = latent(&bank2, 2);
        let b = latent(&bank2, 4);
        let tol = 1e-12 * (1.0 + a.max_abs());
        for i in 0..6 {
            for (x, y) in a.row(i).iter().zip(b.row(perm[i])) {
                assert!((x - y).abs() <= tol, "{kind}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn forward_gradchecks() {
    let (bank, samples) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in KINDS {
        let mut params = ModelParams::new(small_arch(kind), 5).unwrap();
        randomize_all(&mut params, &mut rng);
        check_store_grads(
            &params.store,
            &|tape, p| params.extract(tape, p, &bank, &samples[3], 2),
            1e-5,
        );
        check_store_grads(
            &params.store,
            &|tape, p| params.forward_f(tape, p, &bank, &samples[0], 2),
            1e-5,
        );
        check_store_grads(
            &params.store,
            &|tape, p| params.forward_g(tape, p, &bank, &samples[0], 1, &samples[3], 2),
            1e-5,
        );
    }
}

#[test]
fn forward_g_base_cases() {
    let (bank, samples) = fixture();
    let params = ModelParams::new(small_arch(LayerKind::Mgn), 6).unwrap();
    let g = |r: &FieldSample, hr: usize, s: &FieldSample, hs: usize| {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let v = params
            .forward_g(&mut tape, &p, &bank, r, hr, s, hs)
            .unwrap();
        tape.value(v).clone()
    };
    let self_diff = g(&samples[0], 1, &samples[0], 1);
    assert!(self_diff.data().iter().all(|&v| v == 0.0));

    // both LR samples on mesh 0, both HR on mesh 0: plain LR difference
    let shared = g(&samples[0], 0, &samples[4], 0);
    let want = bank
        .field(&samples[0])
        .unwrap()
        .sub(&bank.field(&samples[4]).unwrap())
        .unwrap();
    assert_eq!(shared, want);

    // different LR meshes, shared HR mesh
    let rs = g(&samples[0], 2, &samples[3], 2);
    let sr = g(&samples[3], 2, &samples[0], 2);
    assert_eq!(rs.shape(), &[6, 1]);
    for (a, b) in rs.data().iter().zip(sr.data()) {
        assert_eq!(*a, -*b);
    }
}

#[test]
fn target_g_cases() {
    let (bank, samples) = fixture();
    let a = &samples[1];
    assert!(target_g(&bank, a, a, 3)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let other = FieldSample {
        values: samples[2].values.clone(),
        mesh_id: 1,
        mu: vec![],
    };
    let plain = bank
        .field(a)
        .unwrap()
        .sub(&bank.field(&other).unwrap())
        .unwrap();
    assert_eq!(target_g(&bank, a, &other, 3).unwrap(), plain);

    // cross mesh: interpolate samples[2] (mesh 2) onto mesh 1 by hand
    let src = bank.mesh(2).unwrap();
    let dst = bank.mesh(1).unwrap();
    let vals = bank.field(&samples[2]).unwrap();
    let got = target_g(&bank, a, &samples[2], 3).unwrap();
    let ua = bank.field(a).unwrap();
    for t in 0..dst.n_nodes() {
        let mut d: Vec<(f64, usize)> = (0..src.n_nodes())
            .map(|s| {
                let dx = src.position(s)[0] - dst.position(t)[0];
                let dy = src.position(s)[1] - dst.position(t)[1];
                ((dx * dx + dy * dy).sqrt(), s)
            })
            .collect();
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut num, mut den) = (0.0, 0.0);
        for &(dist, s) in &d[..3] {
            let w = 1.0 / (dist * dist);
            num += w * vals.get(s, 0);
            den += w;
        }
        let want = ua.get(t, 0) - num / den;
        assert!((got.get(t, 0) - want).abs() < 1e-12);
    }
}

#[test]
fn extractor_storage_is_shared() {
    let (bank, samples) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ModelParams::new(small_arch(LayerKind::Mgn), 7).unwrap();
    for w in [
        params.decoder_f.layers()[2].weight,
        params.decoder_g.layers()[2].weight,
    ] {
        *params.store.get_mut(w) = random(&mut rng, 4, 1);
    }
    let g_out = |params: &ModelParams| {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let v = params
            .forward_g(&mut tape, &p, &bank, &samples[0], 1, &samples[3], 2)
            .unwrap();
        tape.value(v).clone()
    };
    let before = g_out(&params);
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let f = params
        .forward_f(&mut tape, &p, &bank, &samples[0], 1)
        .unwrap();
    let loss = tape.sum(f);
    let mut grads = tape.backward(loss).unwrap();
    let grads = p.gradients(&mut grads);
    let enc = params.shared.encoder.layers()[0].weight;
    let g = grads[enc.index()].clone();
    assert!(g.max_abs() > 0.0);
    for (w, gv) in params
        .store
        .get_mut(enc)
        .data_mut()
        .iter_mut()
        .zip(g.data())
    {
        *w -= 0.1 * gv;
    }
    assert_ne!(g_out(&params), before);
    // the decoder_g weights got no gradient from F's loss
    let dg = params.decoder_g.layers()[0].weight;
    assert_eq!(grads[dg.index()].max_abs(), 0.0);
}

#[test]
fn checkpoint_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ModelParams::new(small_arch(LayerKind::Gin), 9).unwrap();
    randomize_all(&mut params, &mut rng);
    let (bank, _) = fixture();
    let bytes = encode_checkpoint(&params, bank.stats());
    let back = decode_checkpoint(&bytes, "mem".as_ref()).unwrap();
    assert_eq!(back.params, params);
    assert_eq!(&back.stats, bank.stats());
    assert_eq!(encode_checkpoint(&back.params, &back.stats), bytes);
    let mut broken = bytes.clone();
    broken[0] = b'X';
    assert!(matches!(
        decode_checkpoint(&broken, "mem".as_ref()),
        Err(Error::Parse { .. })
    ));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 8], "mem".as_ref()).is_err());
}

#[test]
fn arch_validation() {
    let bad = ArchConfig {
        kind: LayerKind::Gcn,
        centering: Centering::BOTH,
        ..ArchConfig::default()
    };
    assert!(matches!(ModelParams::new(bad, 0), Err(Error::Config(_))));
    let zero = ArchConfig {
        hidden: 0,
        ..ArchConfig::default()
    };
    assert!(ModelParams::new(zero, 0).is_err());
}
