//! Shared unit-test systems.

use std::collections::BTreeMap;

use num_rational::BigRational;

use crate::symbolic::expr::Symbol;
use crate::symbolic::parse::parse_any;

use super::DiscreteSystem;

fn zero_point(syms: &[Symbol]) -> BTreeMap<Symbol, BigRational> {
    syms.iter().map(|s| (s.clone(), BigRational::from_integer(0.into()))).collect()
}

/// Four states, two inputs, flat; the running example for the whole
/// decomposition pipeline.
pub(crate) fn academic() -> DiscreteSystem {
    let states: Vec<Symbol> = ["x1", "x2", "x3", "x4"].iter().map(|s| Symbol::new(s)).collect();
    let inputs: Vec<Symbol> = ["u1", "u2"].iter().map(|s| Symbol::new(s)).collect();
    let updates = vec![
        parse_any("(x2+x3+3*x4)/(u1+2*u2+1)").unwrap(),
        parse_any("x1*(x3+1)*(u1+2*u2-3)+x4-3*u2").unwrap(),
        parse_any("u1+2*u2").unwrap(),
        parse_any("x1*(x3+1)+u2").unwrap(),
    ];
    let all: Vec<Symbol> = states.iter().chain(inputs.iter()).cloned().collect();
    DiscreteSystem {
        name: "academic".into(),
        states,
        inputs,
        updates,
        equilibrium: zero_point(&all),
        params: BTreeMap::new(),
    }
}

/// Exactly discretized wheeled mobile robot after an input transformation;
/// not flat.
pub(crate) fn robot_exact() -> DiscreteSystem {
    let states: Vec<Symbol> = ["x1", "x2", "x3"].iter().map(|s| Symbol::new(s)).collect();
    let inputs: Vec<Symbol> = ["u1", "u2"].iter().map(|s| Symbol::new(s)).collect();
    let updates = vec![
        parse_any("x1+u1*cos(u2)").unwrap(),
        parse_any("x2+u1*sin(u2)").unwrap(),
        parse_any("-x3+2*u2").unwrap(),
    ];
    let all: Vec<Symbol> = states.iter().chain(inputs.iter()).cloned().collect();
    DiscreteSystem {
        name: "robot-exact".into(),
        states,
        inputs,
        updates,
        equilibrium: zero_point(&all),
        params: BTreeMap::new(),
    }
}

/// Euler-discretized wheeled mobile robot with sampling time T = 1/10; flat
/// with flat output (x1, x2).
pub(crate) fn robot_euler() -> DiscreteSystem {
    let states: Vec<Symbol> = ["x1", "x2", "x3"].iter().map(|s| Symbol::new(s)).collect();
    let inputs: Vec<Symbol> = ["u1", "u2"].iter().map(|s| Symbol::new(s)).collect();
    let updates = vec![
        parse_any("x1+T*sin(x3)*u1").unwrap(),
        parse_any("x2+T*cos(x3)*u1").unwrap(),
        parse_any("x3+T*u2").unwrap(),
    ];
    let all: Vec<Symbol> = states.iter().chain(inputs.iter()).cloned().collect();
    let params = [(Symbol::new("T"), BigRational::new(1.into(), 10.into()))].into_iter().collect();
    DiscreteSystem {
        name: "robot-euler".into(),
        states,
        inputs,
        updates,
        equilibrium: zero_point(&all),
        params,
    }
}
