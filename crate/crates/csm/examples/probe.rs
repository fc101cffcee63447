use csm::distributions::MixingSpec;
use csm::model::OutlierFrame;
use csm::robustness::*;
use nalgebra::{dmatrix, dvector, DMatrix};

fn main() {
    let tol = 1e-6;
    let sigma = dmatrix![1.0, 0.9; 0.9, 1.0];
    let spec = MixingSpec::SymmetricLogPareto { gamma: 1.0 };
    for y2 in [1.7f64, 1.8] {
        let reference = model_likelihood(&dvector![y2], &dvector![0.0], &DMatrix::from_element(1,1,1.0), &spec, 1.0, tol).unwrap();
        let errs: Vec<f64> = [1e2, 1e3, 1e4, 1e5, 1e6].iter().map(|&om| {
            let frame = OutlierFrame::new(DMatrix::from_row_slice(1,2,&[0.0, y2]), DMatrix::from_row_slice(1,2,&[1.0, 0.0]), om).unwrap();
            let v = scaled_likelihood(&frame, 0, &dvector![0.0, 0.0], &sigma, &spec, 1.0, tol).unwrap();
            v / reference - 1.0
        }).collect();
        println!("pure y2={y2}: rel errs = {:?}", errs.iter().map(|e| format!("{:+.4}", e)).collect::<Vec<_>>());
    }
    // Spike at large omega.
    let sigma2 = dmatrix![1.0, 0.5; 0.5, 1.0];
    for (y2, phi) in [(1.0, 0.2), (2.0, 0.2)] {
        let reference = model_likelihood(&dvector![y2], &dvector![0.0], &DMatrix::from_element(1,1,1.0), &spec, phi, tol).unwrap();
        let errs: Vec<f64> = [1e6, 1e18, 1e30].iter().map(|&om| {
            let frame = OutlierFrame::new(DMatrix::from_row_slice(1,2,&[0.0, y2]), DMatrix::from_row_slice(1,2,&[1.0, 0.0]), om).unwrap();
            let v = scaled_likelihood(&frame, 0, &dvector![0.0, 0.0], &sigma2, &spec, phi, tol).unwrap();
            v / reference - 1.0
        }).collect();
        println!("spike(rho=.5) y2={y2} phi={phi}: errs(1e6,1e18,1e30) = {:?}", errs.iter().map(|e| format!("{:+.4}", e)).collect::<Vec<_>>());
    }
}
