//! Finite-difference checks of every tape op and of whole models.

use structadapt::adapters::{gcn_conv, rgcn_conv, AdapterError, AdapterKind, ConvGraph};
use structadapt::tensor::gradcheck::{check_inputs, CheckReport};
use structadapt::tensor::{Edge, SoftmaxMask, Tape, TensorError, Var};

use super::{check_model, random, tiny_model};

pub const TOL: f64 = 1e-4;

/// Reduces `y` to a scalar through fixed random weights so that every
/// output coordinate matters.
fn weigh(t: &mut Tape<f64>, y: Var) -> Result<Var, TensorError> {
    let shape = t.shape(y).to_vec();
    let w = t.constant(random(&shape, 77));
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn check(shapes: &[&[usize]], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>) -> CheckReport {
    let inputs: Vec<_> = shapes.iter().enumerate().map(|(i, s)| random(s, i as u64 + 1)).collect();
    check_inputs(&inputs, |t, v| {
        let y = f(t, v)?;
        weigh(t, y)
    })
    .unwrap()
}

fn tensor_err(e: AdapterError) -> TensorError {
    match e {
        AdapterError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

pub fn op_checks() -> Vec<(&'static str, CheckReport)> {
    let edges = vec![
        Edge { src: 0, tgt: 1, weight: 0.5 },
        Edge { src: 2, tgt: 1, weight: 0.5 },
        Edge { src: 1, tgt: 0, weight: 1.0 },
        Edge { src: 3, tgt: 3, weight: -0.3 },
    ];
    let graph = ConvGraph { n: 4, gcn: edges.clone(), relations: vec![edges[..2].to_vec(), edges[2..].to_vec()] };
    let keys = vec![true, false, true, true, false];
    vec![
        ("matmul", check(&[&[3, 4], &[4, 5]], |t, v| t.matmul(v[0], v[1]))),
        ("matmul_nt", check(&[&[3, 4], &[5, 4]], |t, v| t.matmul_nt(v[0], v[1]))),
        ("transpose", check(&[&[3, 4]], |t, v| t.transpose(v[0]))),
        ("add", check(&[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]))),
        ("add row", check(&[&[3, 4], &[4]], |t, v| t.add(v[0], v[1]))),
        ("mul", check(&[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1]))),
        ("scale", check(&[&[3, 4]], |t, v| t.scale(v[0], -1.7))),
        ("relu", check(&[&[4, 5]], |t, v| t.relu(v[0]))),
        ("concat_cols", check(&[&[3, 2], &[3, 4]], |t, v| t.concat_cols(&[v[0], v[1]]))),
        ("concat_rows", check(&[&[2, 3], &[4, 3]], |t, v| t.concat_rows(&[v[0], v[1]]))),
        ("slice_cols", check(&[&[3, 6]], |t, v| t.slice_cols(v[0], 2, 3))),
        ("slice_rows", check(&[&[5, 3]], |t, v| t.slice_rows(v[0], 1, 3))),
        ("gather", check(&[&[5, 3]], |t, v| t.gather(v[0], &[4, 0, 4, 2]))),
        ("reshape", check(&[&[3, 4]], |t, v| t.reshape(v[0], &[2, 6]))),
        ("sum", check(&[&[3, 4]], |t, v| t.sum(v[0]))),
        ("mean", check(&[&[3, 4]], |t, v| t.mean(v[0]))),
        ("softmax", check(&[&[3, 5]], |t, v| t.softmax(v[0], &SoftmaxMask::none()))),
        ("softmax causal", check(&[&[4, 4]], |t, v| t.softmax(v[0], &SoftmaxMask::causal()))),
        ("softmax keys", check(&[&[3, 5]], |t, v| t.softmax(v[0], &SoftmaxMask::keys(keys.clone())))),
        ("layer_norm", check(&[&[3, 6], &[6], &[6]], |t, v| t.layer_norm(v[0], v[1], v[2]))),
        ("cross_entropy", check(&[&[4, 6]], |t, v| t.cross_entropy(v[0], &[1, 5, 0, 3], None))),
        ("cross_entropy ignore", check(&[&[4, 6]], |t, v| t.cross_entropy(v[0], &[1, 0, 2, 0], Some(0)))),
        ("aggregate", check(&[&[4, 3]], |t, v| t.aggregate(v[0], &edges, 4))),
        ("gcn", check(&[&[4, 5], &[3, 5]], |t, v| gcn_conv(t, v[0], &graph, v[1]))),
        ("rgcn", check(&[&[4, 5], &[3, 5], &[3, 5]], |t, v| rgcn_conv(t, v[0], &graph, &v[1..]).map_err(tensor_err))),
    ]
}

/// The three model variants plus the GCN and basis-decomposed adapters.
pub fn model_checks() -> Vec<(&'static str, CheckReport)> {
    [
        ("fine-tune", None, 0, 6),
        ("adapt", Some(AdapterKind::Adapt), 0, 12),
        ("structadapt-rgcn", Some(AdapterKind::StructadaptRgcn), 0, 12),
        ("structadapt-rgcn bases", Some(AdapterKind::StructadaptRgcn), 2, 12),
        ("structadapt-gcn", Some(AdapterKind::StructadaptGcn), 0, 12),
    ]
    .into_iter()
    .map(|(name, kind, bases, probes)| {
        let (mut m, ex) = tiny_model(kind, bases);
        (name, check_model(&mut m, &ex, probes))
    })
    .collect()
}

/// First check above tolerance, if any.
pub fn worst(checks: &[(&'static str, CheckReport)]) -> Option<String> {
    checks
        .iter()
        .find(|(_, r)| r.checked == 0 || r.max_rel_error > TOL || r.max_rel_error.is_nan())
        .map(|(n, r)| format!("{n}: relative error {:e} at {}", r.max_rel_error, r.worst))
}
