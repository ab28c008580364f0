use proptest::prelude::*;
use synchron::*;

/// An event expression before canonicalisation.
#[derive(Debug, Clone)]
pub enum Tree {
    Send(u32, i64),
    Recv(u32),
    Choose(Box<Tree>, Box<Tree>),
    Wrap(Box<Tree>, usize),
}

pub const POOL: usize = 8;

pub fn pool() -> Vec<WrapFn> {
    (0..POOL as i64)
        .map(|k| WrapFn::pure(move |v| Value::Int(v.as_int().unwrap_or(0) * 3 + k)))
        .collect()
}

pub fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![
        (0u32..6, -50i64..50).prop_map(|(c, v)| Tree::Send(c, v)),
        (0u32..6).prop_map(Tree::Recv),
    ];
    // Five recursion levels over a leaf give trees of depth at most six.
    leaf.prop_recursive(5, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Choose(Box::new(a), Box::new(b))),
            (inner, 0..POOL).prop_map(|(a, f)| Tree::Wrap(Box::new(a), f)),
        ]
    })
}

pub fn depth(t: &Tree) -> usize {
    match t {
        Tree::Send(..) | Tree::Recv(_) => 1,
        Tree::Choose(a, b) => 1 + depth(a).max(depth(b)),
        Tree::Wrap(a, _) => 1 + depth(a),
    }
}

pub fn build(t: &Tree, fs: &[WrapFn]) -> Event {
    match t {
        Tree::Send(c, v) => BaseEvent::send(ChannelId(*c), Value::Int(*v)).into(),
        Tree::Recv(c) => BaseEvent::recv(ChannelId(*c)).into(),
        Tree::Choose(a, b) => choose(&build(a, fs), &build(b, fs)),
        Tree::Wrap(a, f) => wrap(&build(a, fs), fs[*f].clone()),
    }
}

/// Reference flattening: the leaves left to right, each carrying the wraps
/// met on the way back up to the root, innermost first.
pub fn flatten(t: &Tree, outer: &[usize], out: &mut Vec<(EventKind, u32, Option<i64>, Vec<usize>)>) {
    match t {
        Tree::Send(c, v) => out.push((EventKind::Send, *c, Some(*v), outer.iter().rev().copied().collect())),
        Tree::Recv(c) => out.push((EventKind::Recv, *c, None, outer.iter().rev().copied().collect())),
        Tree::Choose(a, b) => {
            flatten(a, outer, out);
            flatten(b, outer, out);
        }
        Tree::Wrap(a, f) => {
            let mut o = outer.to_vec();
            o.push(*f);
            flatten(a, &o, out);
        }
    }
}
