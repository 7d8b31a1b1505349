from sliderkit import errors


def test_hierarchy():
    # every package error is catchable at the root
    for name in ("ValidationError", "ConfigurationError", "ContractViolation",
                 "CapabilityError", "NotFoundError", "ParseError",
                 "IntegrityError", "BackendError", "TrainingError"):
        assert issubclass(getattr(errors, name), errors.SliderKitError), name


def test_exit_code_families():
    # user mistakes exit 1, damaged artifacts exit 2, runtime failures 3
    assert errors.ValidationError.exit_code == 1
    for cls in (errors.ConfigurationError, errors.ContractViolation,
                errors.CapabilityError, errors.NotFoundError):
        assert issubclass(cls, errors.ValidationError)
    assert errors.IntegrityError.exit_code == 2
    assert issubclass(errors.ParseError, errors.IntegrityError)
    assert errors.BackendError.exit_code == 3
    assert issubclass(errors.TrainingError, errors.BackendError)
