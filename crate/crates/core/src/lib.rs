pub mod agents;
pub mod evalharness;
pub mod flightlang;
pub mod llmclient;
pub mod looprunner;
pub mod semantics;
pub mod sim;
