import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.module.__name__ == "test_acceptance":
        word = "PASS" if report.passed else "FAIL"
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        print(f"\n[{word}] {doc}")
