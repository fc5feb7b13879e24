use diffuse_domain::expr::{BinOp, Expression, Func, Node, Var};
use proptest::prelude::*;

/// Independent evaluator: `None` wherever the language defines an error.
fn reference(node: &Node, x: f64, y: f64) -> Option<f64> {
    let v = match node {
        Node::Num(v) => *v,
        Node::Var(Var::X) => x,
        Node::Var(Var::Y) => y,
        Node::Neg(a) => -reference(a, x, y)?,
        Node::Call(f, a) => {
            let a = reference(a, x, y)?;
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Tanh => a.tanh(),
                Func::Sqrt if a < 0.0 => return None,
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
            }
        }
        Node::Binary(op, a, b) => {
            let (a, b) = (reference(a, x, y)?, reference(b, x, y)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div if b == 0.0 => return None,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
    };
    v.is_finite().then_some(v)
}

fn literal(allow_negative: bool) -> BoxedStrategy<f64> {
    let magnitude = prop_oneof![(0u32..20).prop_map(f64::from), 0.0..50.0f64, 1e-8..1e8f64];
    if allow_negative {
        (magnitude, any::<bool>()).prop_map(|(v, neg)| if neg { -v } else { v }).boxed()
    } else {
        magnitude.boxed()
    }
}

fn tree(allow_negative: bool) -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        literal(allow_negative).prop_map(Node::Num),
        Just(Node::Var(Var::X)),
        Just(Node::Var(Var::Y)),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        let op = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Pow),
        ];
        let func = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Exp),
            Just(Func::Tanh),
            Just(Func::Sqrt),
            Just(Func::Abs),
        ];
        prop_oneof![
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (func, inner.clone()).prop_map(|(f, a)| Node::Call(f, Box::new(a))),
            (op, inner.clone(), inner).prop_map(|(op, a, b)| Node::Binary(op, Box::new(a), Box::new(b))),
        ]
    })
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a.to_bits() == b.to_bits() || a == b,
        (None, None) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parsed_text_evaluates_like_the_tree(node in tree(true), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let text = Expression::from_node(node.clone()).to_string();
        let parsed = Expression::parse(&text).unwrap();
        let got = parsed.evaluate(&[x, y]).ok();
        let want = reference(&node, x, y);
        prop_assert!(same(got, want), "{text}: got {got:?}, want {want:?}");
    }

    #[test]
    fn printing_is_a_fixed_point(node in tree(true)) {
        let once = Expression::from_node(node).to_string();
        let twice = Expression::parse(&once).unwrap().to_string();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn parse_inverts_print(node in tree(false)) {
        let text = Expression::from_node(node.clone()).to_string();
        let parsed = Expression::parse(&text).unwrap();
        prop_assert_eq!(parsed.root(), &node, "{}", text);
    }
}
