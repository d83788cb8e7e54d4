//! Special functions and bound formulas against values computed with mpmath at 40-50
//! significant digits.

#![allow(clippy::excessive_precision)]

use nearlin_core::abound::{full_bound, BoundConfig, VAnchor};
use nearlin_core::specfun::{expint_e1, hyp2f1_learning, upper_gamma, GammaArgs};

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

const UPPER_GAMMA: &[(f64, f64, f64)] = &[
    (-0.9, 1e-3, 551.3157844843344452),
    (-0.9, 0.1, 6.1631015855643533273),
    (-0.9, 1.5, 0.052208255278501854722),
    (-0.9, 7.0, 0.000018153152397571344483),
    (-0.9, 30.0, 1.3763634613189755448e-16),
    (-0.5, 1e-3, 59.763880515942196981),
    (-0.5, 0.1, 3.4017693366916154163),
    (-0.5, 1.5, 0.069204999317904974341),
    (-0.5, 7.0, 0.000041271152284605146367),
    (-0.5, 30.0, 5.4314372469021467831e-16),
    (-1.0 / 3.0, 1e-3, 25.952643182345682833),
    (-1.0 / 3.0, 0.1, 2.7177843931483683856),
    (-1.0 / 3.0, 1.5, 0.078080296723904348904),
    (-1.0 / 3.0, 7.0, 0.000058140015185698416939),
    (-1.0 / 3.0, 30.0, 9.6237025332463254855e-16),
    (-0.05, 1e-3, 7.6231710693910362859),
    (-0.05, 0.1, 1.9265952047187879645),
    (-0.05, 1.5, 0.096318409162102583926),
    (-0.05, 7.0, 0.00010417760864687026565),
    (-0.05, 30.0, 2.5450367637164816143e-15),
    (0.0, 1e-3, 6.331539364136149332),
    (0.0, 0.1, 1.8229239584193906661),
    (0.0, 1.5, 0.1000195824066326519),
    (0.0, 7.0, 0.00011548173161033821643),
    (0.0, 30.0, 3.0215520106888125448e-15),
    (0.25, 1e-3, 2.9144403670509397206),
    (0.25, 0.1, 1.4200105615906900388),
    (0.25, 1.5, 0.12115499104033848615),
    (0.25, 7.0, 0.0001933700077637463535),
    (0.25, 30.0, 7.1273042552598226833e-15),
    (0.5, 1e-3, 1.7092293732301664633),
    (0.5, 0.1, 1.1604624847937442468),
    (0.5, 1.5, 0.14758251320409641878),
    (0.5, 7.0, 0.00032402341041512844023),
    (0.5, 30.0, 1.6813032086528978612e-14),
    (2.0 / 3.0, 1e-3, 1.3391239375518549345),
    (2.0 / 3.0, 0.1, 1.0434849912060964279),
    (2.0 / 3.0, 1.5, 0.16889538342451533567),
    (2.0 / 3.0, 7.0, 0.00045731354971247360607),
    (2.0 / 3.0, 30.0, 2.9794828720748473074e-14),
    (1.0, 1e-3, 0.99900049983337499167),
    (1.0, 0.1, 0.90483741803595957316),
    (1.0, 1.5, 0.22313016014842982893),
    (1.0, 7.0, 0.000911881965554516208),
    (1.0, 30.0, 9.3576229688401746049e-14),
];

const E1: &[(f64, f64)] = &[
    (1e-6, 13.238295893062491244),
    (1e-2, 4.0379295765381138318),
    (0.5, 0.55977359477616081175),
    (1.0, 0.21938393439552027368),
    (2.5, 0.024914917870269735496),
    (10.0, 4.1569689296853242774e-6),
    (40.0, 1.0367732614516569722e-19),
    (100.0, 3.6835977616820321802e-46),
];

const HYP2F1: &[(u32, f64, f64)] = &[
    (3, 1e-4, 0.99994999799987499091),
    (3, 0.1, 0.94786513050462899843),
    (3, 0.5, 0.67484442157051998051),
    (3, 0.9, 0.031582635040230244341),
    (3, 0.99, -0.77499175201547853253),
    (3, 0.999, -1.548630084956934889),
    (4, 1e-4, 0.99989999666646665238),
    (4, 0.1, 0.89645117050859380875),
    (4, 0.5, 0.37677475985976948661),
    (4, 0.9, -0.72512978427255634148),
    (4, 0.99, -1.9782191283562703921),
    (4, 0.999, -3.1447008202795955513),
    (5, 1e-4, 0.99984999571403569664),
    (5, 0.1, 0.84544515364373018934),
    (5, 0.5, 0.093277214404300951714),
    (5, 0.9, -1.3792592299777677115),
    (5, 0.99, -2.9262413995002784875),
    (5, 0.999, -4.3315928340312563067),
];
#[test]
fn upper_gamma_matches_mpmath() {
    for &(a, x, want) in UPPER_GAMMA {
        let got = upper_gamma(GammaArgs::new(a, x).unwrap()).unwrap();
        assert!(rel(got, want) < 1e-12, "a={a} x={x}: {got} vs {want}");
    }
}

#[test]
fn e1_matches_mpmath() {
    for &(x, want) in E1 {
        let got = expint_e1(x).unwrap();
        assert!(rel(got, want) < 1e-12, "x={x}: {got} vs {want}");
    }
}

#[test]
fn hyp2f1_matches_mpmath() {
    for &(l, z, want) in HYP2F1 {
        let got = hyp2f1_learning(l, z).unwrap();
        assert!(rel(got, want) < 1e-10, "L={l} z={z}: {got} vs {want}");
    }
}

struct BoundCase {
    depth: usize,
    d: usize,
    beta: f64,
    epsilon: f64,
    gamma: f64,
    delta: f64,
    kappa: u8,
    p: u32,
    rho: f64,
    s: f64,
    t: f64,
    anchor: VAnchor,
    /// u, v, w(u), upsilon, delta_term
    want: [f64; 5],
}

#[test]
fn full_bound_matches_mpmath() {
    let cases = [
        BoundCase {
            depth: 2,
            d: 49,
            beta: 0.001,
            epsilon: 0.001,
            gamma: 1e-6,
            delta: 0.01,
            kappa: 2,
            p: 32,
            rho: 4.034,
            s: 0.63319,
            t: 4.0,
            anchor: VAnchor::Beta,
            want: [0.012626955889538544, 0.050571845207783269, -12.315449988122462, 0.13473166939086669, 0.037870941011143304],
        },
        BoundCase {
            depth: 2,
            d: 49,
            beta: 0.001,
            epsilon: 0.001,
            gamma: 1e-6,
            delta: 0.01,
            kappa: 1,
            p: 32,
            rho: 4.034,
            s: 0.63319,
            t: 4.0,
            anchor: VAnchor::Beta,
            want: [0.012626955889538544, 0.050571845207783269, -12.315449988122462, 0.095370328601369442, 12.154512042729263],
        },
        BoundCase {
            depth: 2,
            d: 49,
            beta: 0.001,
            epsilon: 0.01,
            gamma: 1e-7,
            delta: 0.01,
            kappa: 2,
            p: 32,
            rho: 1.0,
            s: 0.63319,
            t: 2.0,
            anchor: VAnchor::BarBeta,
            want: [0.003574117169301703, 0.0071483660301548145, -17.078390299806056, 0.13473166939086669, 0.81757112834654009],
        },
        BoundCase {
            depth: 3,
            d: 49,
            beta: 0.3,
            epsilon: 0.05,
            gamma: 1e-3,
            delta: 0.01,
            kappa: 2,
            p: 16,
            rho: 1.5,
            s: 0.63319,
            t: 2.0,
            anchor: VAnchor::Beta,
            want: [0.5735088722235327, 1.9837975005065577, -2.0996564679732746, 0.095370328601369442, 185.96126014003388],
        },
        BoundCase {
            depth: 4,
            d: 188,
            beta: 0.5,
            epsilon: 0.1,
            gamma: 1e-2,
            delta: 0.1,
            kappa: 1,
            p: 16,
            rho: 1.2,
            s: 0.71,
            t: 0.5,
            anchor: VAnchor::BarBeta,
            want: [0.60389990554746584, 0.40969691270045467, -3.585264095804606, 0.13188660862704843, 53.638254650555675],
        },
    ];
    for c in cases {
        let cfg = BoundConfig {
            depth: c.depth,
            d: c.d,
            m: 60000,
            beta: c.beta,
            epsilon: c.epsilon,
            gamma: c.gamma,
            delta: c.delta,
            kappa: c.kappa,
            p: c.p,
            rho: c.rho,
            s: c.s,
            n1: None,
            v_anchor: c.anchor,
        };
        let b = full_bound(&cfg, c.t, Some(0.25)).unwrap();
        let got = [b.u, b.v, b.w_at_u, b.upsilon, b.delta_term];
        for (i, (g, w)) in got.iter().zip(&c.want).enumerate() {
            assert!(rel(*g, *w) < 1e-10, "L={} field {i}: {g} vs {w}", c.depth);
        }
        assert!(rel(b.total, 0.25 + c.want[3] + c.want[4]) < 1e-12);
    }
}
