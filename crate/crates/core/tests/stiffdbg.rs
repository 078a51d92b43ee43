use std::sync::Arc;

use efforder::model::{BrownianDynamics, NoiseStream, Stiff3d, DEFAULT_SIGMA};
use efforder::newton::NewtonConfig;
use efforder::schemes::{preset, step_theta_modified, ChainState};

#[test]
fn walk_stiff3d_until_failure() {
    let problem = BrownianDynamics::new(Arc::new(Stiff3d::default()), DEFAULT_SIGMA);
    let spec = preset("theta1_stab").unwrap();
    let newton = NewtonConfig::default();
    let h = 0.1;
    let mut stream = NoiseStream::new(103, 0, 3);
    let mut state = ChainState::initial(&[1.0, 2.0, 3.0]);
    let mut xi = vec![0.0; 3];
    for step in 0..1000 {
        stream.next_into(&mut xi);
        match step_theta_modified(&problem, &spec, h, &state, &xi, &newton) {
            Ok(out) => state = out.next,
            Err(err) => {
                panic!("step {step} from {:?} xi {:?}: {err}", state.x, xi);
            }
        }
    }
}
