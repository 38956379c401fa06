use super::*;

fn last_error() -> String {
    let n = unsafe { sg_last_error(std::ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n + 1];
    unsafe { sg_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned()
}

#[test]
fn panics_become_status() {
    assert_eq!(guard(|| panic!("boom")), SgStatus::SgPanic);
    assert!(last_error().contains("boom"));
    assert_eq!(guard(|| Ok(())), SgStatus::SgOk);
    assert_eq!(last_error(), "");
}

#[test]
fn errors_map_to_codes() {
    let io = Error::io(Path::new("x"), std::io::Error::other("gone"));
    assert_eq!(Failure::from(io).0, SgStatus::SgIo);
    assert_eq!(Failure::from(Error::Format("bad".into())).0, SgStatus::SgFormat);
    let nested = Error::At { path: "m".into(), inner: Box::new(Error::Format("bad".into())) };
    assert_eq!(Failure::from(nested).0, SgStatus::SgFormat);
    assert_eq!(Failure::from(Error::Invalid("no".into())).0, SgStatus::SgInvalidArgument);
}

#[test]
fn truncated_message_is_terminated() {
    guard(|| Err(invalid("abcdefgh")));
    let mut buf = [1 as c_char; 4];
    let n = unsafe { sg_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, 8);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes(), b"abc");
}
