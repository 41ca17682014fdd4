//! Bicubic resizing against values produced by an independent MATLAB-`imresize`
//! port run in double precision.

use lpcn::resample::{resize_bicubic, ResampleSpec};
use lpcn::{Shape, Tensor};

fn pattern(rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(rows, cols, 1).unwrap(), |x, y, _| {
        ((x * 37 + y * 91 + (x * y) % 7 * 13) % 256) as f64
    })
}

fn check(img: Tensor<f64>, spec: ResampleSpec, rows: usize, cols: usize, expected: &[f64]) {
    let out = resize_bicubic(&img, &spec).unwrap();
    assert_eq!((out.rows(), out.cols()), (rows, cols));
    for (i, (a, b)) in out.data().iter().zip(expected).enumerate() {
        assert!((a - b).abs() < 1e-9, "element {i}: {a} vs {b}");
    }
}

#[test]
fn antialiased_downscale_by_four() {
    check(
        pattern(12, 10),
        ResampleSpec::downscale(4).unwrap(),
        3,
        3,
        &[
            114.73883986473083, 130.61240434646606, 133.7475848197937, 133.41946053504944,
            128.52565670013428, 108.95900869369507, 124.78774452209473, 134.65600633621216,
            153.68818187713623,
        ],
    );
}

#[test]
fn antialiased_downscale_by_three() {
    check(
        pattern(12, 10),
        ResampleSpec::downscale(3).unwrap(),
        4,
        4,
        &[
            104.46334400243866, 124.84362139917694, 128.6477671086724, 119.81115683584817,
            138.676268861454, 131.93888126809938, 143.54275262917238, 144.67825026672764,
            122.90382563633597, 130.52705380277393, 107.33988721231519, 86.05426002133824,
            127.79195244627344, 125.78920896204843, 154.80704160951072, 173.72382258802008,
        ],
    );
}

#[test]
fn upscale_by_two() {
    check(
        pattern(3, 5),
        ResampleSpec::upscale(2).unwrap(),
        6,
        10,
        &[
            -11.8857421875, 12.663818359375, 61.762939453125, 114.7578125, 171.6484375,
            146.5390625, 39.4296875, 16.424560546875, 77.523681640625, 108.0732421875,
            -2.101806640625, 23.27911376953125, 74.04095458984375, 130.677734375, 193.189453125,
            169.80743408203125, 60.53167724609375, 38.18914794921875, 102.77984619140625,
            135.0751953125, 17.466064453125, 44.50970458984375, 98.59698486328125, 162.517578125,
            236.271484375, 216.34417724609375, 102.73565673828125, 81.71832275390625,
            153.29217529296875, 189.0791015625, 37.033935546875, 67.66217041015625,
            128.91864013671875, 175.779296875, 208.244140625, 192.4547119140625, 128.4110107421875,
            125.09234619140625, 182.49871826171875, 211.201904296875, 56.601806640625,
            92.73651123046875, 165.00592041015625, 170.462890625, 109.107421875, 98.1390380859375,
            137.5577392578125, 168.31121826171875, 190.39947509765625, 201.443603515625,
            66.3857421875, 105.273681640625, 183.049560546875, 167.8046875, 59.5390625,
            50.981201171875, 142.131103515625, 189.920654296875, 194.349853515625, 196.564453125,
        ],
    );
}

#[test]
fn upscale_by_four_corners_and_centre() {
    let out = resize_bicubic(&pattern(3, 3), &ResampleSpec::upscale(4).unwrap()).unwrap();
    assert_eq!(out.shape(), Shape::new(12, 12, 1).unwrap());
    let expect = [
        ((0, 0), -14.82147216796875),
        ((0, 11), 185.10272216796875),
        ((11, 0), 64.44647216796875),
        ((11, 11), 9.75665283203125),
        ((5, 5), 120.33703327178955),
        ((6, 7), 184.44750881195068),
    ];
    for ((x, y), v) in expect {
        assert!((out.get(x, y, 0) - v).abs() < 1e-9, "({x},{y})");
    }
}
