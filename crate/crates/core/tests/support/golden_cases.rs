//! Golden parser cases shared by the parser tests and the acceptance suite.

use skyloop::flightlang::{ParseErrorKind, Verb};

use ParseErrorKind::*;
use Verb::*;

type Expected = &'static [(Verb, Option<f64>, usize)];

pub const VALID: &[(&str, Expected)] = &[
    ("takeoff(5)", &[(Takeoff, Some(5.0), 1)]),
    ("land", &[(Land, None, 1)]),
    ("land()", &[(Land, None, 1)]),
    ("land ( )", &[(Land, None, 1)]),
    (
        "takeoff(5)\nland",
        &[(Takeoff, Some(5.0), 1), (Land, None, 2)],
    ),
    ("TAKEOFF(5)", &[(Takeoff, Some(5.0), 1)]),
    ("Forward(2.5)", &[(Forward, Some(2.5), 1)]),
    ("backward(10)", &[(Backward, Some(10.0), 1)]),
    ("left(0.5)", &[(Left, Some(0.5), 1)]),
    ("right(100)", &[(Right, Some(100.0), 1)]),
    ("up(1)", &[(Up, Some(1.0), 1)]),
    ("down(0.25)", &[(Down, Some(0.25), 1)]),
    ("turn_cw(90)", &[(TurnCw, Some(90.0), 1)]),
    ("turn_ccw(45)", &[(TurnCcw, Some(45.0), 1)]),
    ("TURN_CW(450)", &[(TurnCw, Some(450.0), 1)]),
    ("  takeoff(5)  ", &[(Takeoff, Some(5.0), 1)]),
    ("\ttakeoff(5)", &[(Takeoff, Some(5.0), 1)]),
    ("takeoff (5)", &[(Takeoff, Some(5.0), 1)]),
    ("takeoff( 5 )", &[(Takeoff, Some(5.0), 1)]),
    ("takeoff(5) # climb", &[(Takeoff, Some(5.0), 1)]),
    ("# header\ntakeoff(5)", &[(Takeoff, Some(5.0), 2)]),
    ("\n\ntakeoff(5)\n\n", &[(Takeoff, Some(5.0), 3)]),
    (
        "takeoff(5)\r\nforward(3)\r\n",
        &[(Takeoff, Some(5.0), 1), (Forward, Some(3.0), 2)],
    ),
    ("takeoff(007)", &[(Takeoff, Some(7.0), 1)]),
    ("forward(3.000)", &[(Forward, Some(3.0), 1)]),
    ("turn_ccw(0.5)", &[(TurnCcw, Some(0.5), 1)]),
    ("land # done (really)", &[(Land, None, 1)]),
    ("takeoff(5)#no space", &[(Takeoff, Some(5.0), 1)]),
    (
        "takeoff(5)\nforward(4)\nturn_cw(90)\nforward(4)\nland",
        &[
            (Takeoff, Some(5.0), 1),
            (Forward, Some(4.0), 2),
            (TurnCw, Some(90.0), 3),
            (Forward, Some(4.0), 4),
            (Land, None, 5),
        ],
    ),
    (
        "takeoff(3)\n  # comment\nup(2)\n\ndown(1)",
        &[
            (Takeoff, Some(3.0), 1),
            (Up, Some(2.0), 3),
            (Down, Some(1.0), 5),
        ],
    ),
    (
        "takeoff(5)\nland\ntakeoff(2)",
        &[
            (Takeoff, Some(5.0), 1),
            (Land, None, 2),
            (Takeoff, Some(2.0), 3),
        ],
    ),
    ("right(1.125)", &[(Right, Some(1.125), 1)]),
    ("LaNd", &[(Land, None, 1)]),
    ("up(120)", &[(Up, Some(120.0), 1)]),
];

pub const INVALID: &[(&str, usize, usize, ParseErrorKind)] = &[
    ("", 1, 1, EmptyScript),
    ("\n\n", 1, 1, EmptyScript),
    ("# only a comment", 1, 1, EmptyScript),
    ("hover(2)", 1, 1, UnknownVerb),
    ("takeoff(5)\nhover(2)", 2, 1, UnknownVerb),
    ("  fly(2)", 1, 3, UnknownVerb),
    ("9up(2)", 1, 1, UnknownVerb),
    ("(5)", 1, 1, UnknownVerb),
    ("turn-cw(90)", 1, 1, UnknownVerb),
    ("turn cw(90)", 1, 1, UnknownVerb),
    ("forward 3", 1, 9, TrailingGarbage),
    ("forward(3", 1, 10, TrailingGarbage),
    ("forward(3))", 1, 11, TrailingGarbage),
    ("forward(3) x", 1, 12, TrailingGarbage),
    ("forward(2 3)", 1, 11, TrailingGarbage),
    ("forward(", 1, 9, TrailingGarbage),
    ("forward", 1, 1, BadArity),
    ("  takeoff()", 1, 3, BadArity),
    ("land(1)", 1, 6, BadArity),
    ("land( 2)", 1, 7, BadArity),
    ("forward(abc)", 1, 9, BadNumber),
    ("forward(+3)", 1, 9, BadNumber),
    ("forward(.5)", 1, 9, BadNumber),
    ("forward(5.)", 1, 9, BadNumber),
    ("forward(1e3)", 1, 9, BadNumber),
    ("forward(2,3)", 1, 9, BadNumber),
    ("forward(1.2.3)", 1, 9, BadNumber),
    ("forward(0)", 1, 9, NonPositive),
    ("forward(0.0)", 1, 9, NonPositive),
    ("forward(-3)", 1, 9, NonPositive),
    ("turn_cw(-0)", 1, 9, NonPositive),
    ("takeoff(5)\n\nup( -1 )", 3, 5, NonPositive),
    ("takeoff(5)\nforward(3)\nland(now)", 3, 6, BadArity),
    ("tåkeoff(5)", 1, 1, UnknownVerb),
    ("takeoff(5) land", 1, 12, TrailingGarbage),
];
