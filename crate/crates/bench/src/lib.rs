//! Fixtures shared by the benchmarks.

use headsplat::binding::{init_bindings, to_world, WorldGaussians};
use headsplat::headmodel::triangle_frames;
use headsplat::synth::{Dataset, SceneSpec};
use headsplat::{Camera, Image};

/// Posed Gaussians of the default fixture at t = 0, with the first camera and its frame.
pub struct Scene {
    pub world: WorldGaussians,
    pub camera: Camera,
    pub frame: Image,
}

pub fn default_scene() -> Scene {
    let data = Dataset::generate(&SceneSpec::default()).expect("fixture generates");
    let mesh = data
        .model
        .evaluate(&data.params_init[0])
        .expect("mesh evaluates");
    let frames = triangle_frames(&mesh, None);
    let cloud = init_bindings(&mesh, 1, 0, 0).expect("bindings initialize");
    Scene {
        world: to_world(&cloud, &mesh, &frames),
        camera: data.cameras[0].clone(),
        frame: data.frames[0][0].clone(),
    }
}
