use super::{BinOp, Node};

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

fn prec(node: &Node) -> u8 {
    match node {
        Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => NEG,
        Node::Const(_) | Node::Var(_) | Node::Call(..) => ATOM,
        Node::Neg(_) => NEG,
        Node::Pow(..) => POW,
        Node::Binary(BinOp::Add | BinOp::Sub, ..) => ADD,
        Node::Binary(BinOp::Mul | BinOp::Div, ..) => MUL,
    }
}

fn number(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn child(out: &mut String, node: &Node, vars: &[String], min: u8) {
    if prec(node) < min {
        out.push('(');
        write(out, node, vars);
        out.push(')');
    } else {
        write(out, node, vars);
    }
}

fn write(out: &mut String, node: &Node, vars: &[String]) {
    match node {
        Node::Const(c) => out.push_str(&number(*c)),
        Node::Var(i) => out.push_str(&vars[*i]),
        Node::Neg(a) => {
            out.push('-');
            child(out, a, vars, NEG);
        }
        Node::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write(out, a, vars);
            out.push(')');
        }
        Node::Pow(a, p) => {
            child(out, a, vars, ATOM);
            out.push('^');
            out.push_str(&number(*p));
        }
        Node::Binary(op, a, b) => {
            let (sym, lhs_min, rhs_min) = match op {
                BinOp::Add => (" + ", ADD, ADD + 1),
                BinOp::Sub => (" - ", ADD, ADD + 1),
                BinOp::Mul => ("*", MUL, MUL + 1),
                BinOp::Div => ("/", MUL, MUL + 1),
            };
            child(out, a, vars, lhs_min);
            out.push_str(sym);
            child(out, b, vars, rhs_min);
        }
    }
}

pub(super) fn render(node: &Node, vars: &[String]) -> String {
    let mut out = String::new();
    write(&mut out, node, vars);
    out
}
