//! Folding node constructors. Only local rewrites: constant arithmetic,
//! additive and multiplicative identities, and sign normalization.

use super::{pow_value, BinOp, Func, Node};

fn c(v: f64) -> Node {
    Node::Const(v)
}

pub fn neg(a: Node) -> Node {
    match a {
        Node::Const(v) => c(-v),
        Node::Neg(inner) => *inner,
        Node::Binary(BinOp::Mul, l, r) if matches!(*l, Node::Const(_)) => {
            let Node::Const(v) = *l else { unreachable!() };
            mul(c(-v), *r)
        }
        other => Node::Neg(Box::new(other)),
    }
}

pub fn add(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => return c(x + y),
        (Some(x), None) if x == 0.0 => return b,
        (None, Some(y)) if y == 0.0 => return a,
        (None, Some(y)) if y < 0.0 => return Node::Binary(BinOp::Sub, Box::new(a), Box::new(c(-y))),
        _ => {}
    }
    match b {
        Node::Neg(inner) => Node::Binary(BinOp::Sub, Box::new(a), inner),
        b => Node::Binary(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => return c(x - y),
        (Some(x), None) if x == 0.0 => return neg(b),
        (None, Some(y)) if y == 0.0 => return a,
        (None, Some(y)) if y < 0.0 => return Node::Binary(BinOp::Add, Box::new(a), Box::new(c(-y))),
        _ => {}
    }
    match b {
        Node::Neg(inner) => Node::Binary(BinOp::Add, Box::new(a), inner),
        b => Node::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => return c(x * y),
        (Some(_), None) => {}
        (None, Some(_)) => return mul(b, a),
        (None, None) => {
            return match (a, b) {
                (Node::Neg(x), y) => neg(mul(*x, y)),
                (x, Node::Neg(y)) => neg(mul(x, *y)),
                (x, y) => Node::Binary(BinOp::Mul, Box::new(x), Box::new(y)),
            };
        }
    }
    let x = a.as_const().unwrap();
    if x == 0.0 {
        return c(0.0);
    }
    if x == 1.0 {
        return b;
    }
    if x == -1.0 {
        return neg(b);
    }
    match b {
        Node::Binary(BinOp::Mul, l, r) if l.as_const().is_some() => {
            let y = l.as_const().unwrap();
            mul(c(x * y), *r)
        }
        Node::Neg(inner) => mul(c(-x), *inner),
        b => Node::Binary(BinOp::Mul, Box::new(c(x)), Box::new(b)),
    }
}

pub fn div(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => c(x / y),
        (Some(x), _) if x == 0.0 => c(0.0),
        (None, Some(y)) if y == 1.0 => a,
        (None, Some(y)) if y != 0.0 => mul(c(1.0 / y), a),
        _ => Node::Binary(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Node, p: f64) -> Node {
    if p == 0.0 {
        return c(1.0);
    }
    if p == 1.0 {
        return a;
    }
    if let Some(x) = a.as_const() {
        if let Ok(v) = pow_value(x, p) {
            return c(v);
        }
    }
    match a {
        Node::Pow(inner, q) if (p * q).fract() == 0.0 && p.fract() == 0.0 && q.fract() == 0.0 => {
            pow(*inner, p * q)
        }
        a => Node::Pow(Box::new(a), p),
    }
}

pub fn call(f: Func, a: Node) -> Node {
    if let Some(x) = a.as_const() {
        if let Ok(v) = f.apply(x) {
            return c(v);
        }
    }
    Node::Call(f, Box::new(a))
}

pub fn binary(op: BinOp, a: Node, b: Node) -> Node {
    match op {
        BinOp::Add => add(a, b),
        BinOp::Sub => sub(a, b),
        BinOp::Mul => mul(a, b),
        BinOp::Div => div(a, b),
    }
}
