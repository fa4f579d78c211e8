import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contractwatch.dsl import ParseError, parse, pretty_print, validate
from contractwatch.dsl.lexer import tokenize
from contractwatch.dsl.syntax import (AddObligation, AddProhibition, AddRight, And, EventPattern,
                                      Not, Or, Pending, Prohibited, RemoveRight, Rights, Rule,
                                      RuleSet, SetCompliance, SetState, StateIs, timeout_type)
from contractwatch.dsl.validate import (RIGHT_PROHIBITION_CONFLICT, UNDISCHARGEABLE_OBLIGATION,
                                        UNKNOWN_OPERATION, UNREACHABLE_RULE)

HEADER = """contract demo
roles buyer, seller
operations POREQ, POrequest, POconfirm, POreject
states CREATED, APPROVED initial CREATED
"""

PO_RULE = """
rule "PO Request Received"
  when event type=POREQ originator=buyer responder=seller status=success
  if rights(buyer, POrequest)
  then remove_right(buyer, POrequest, seller);
       add_obligation("ReactToPOReq", {POconfirm, POreject}, seller, buyer, 10min);
       compliant(true)
end
"""


def test_po_rule_transliteration():
    rs = parse(HEADER + PO_RULE)
    assert len(rs.rules) == 1
    (r,) = rs.rules
    assert r.pattern == EventPattern("POREQ", "buyer", "seller", "success")
    assert r.guard == Rights("buyer", "POrequest")
    assert r.then == (RemoveRight("buyer", "POrequest", "seller"),
                      AddObligation("ReactToPOReq", frozenset({"POconfirm", "POreject"}),
                                    "seller", "buyer", 600_000),
                      SetCompliance(True))
    assert r.otherwise == ()


def test_header_only():
    rs = parse(HEADER)
    assert rs.rules == () and rs.initial == "CREATED"
    assert rs.roles == ("buyer", "seller")


def test_undeclared_role_location():
    src = HEADER + PO_RULE.replace("remove_right(buyer", "remove_right(auditor")
    with pytest.raises(ParseError) as exc:
        parse(src)
    lines = src.split("\n")
    line_no = next(i for i, l in enumerate(lines, 1) if "auditor" in l)
    assert exc.value.line == line_no
    assert exc.value.column == lines[line_no - 1].index("auditor") + 1
    assert "auditor" in exc.value.message


def test_undeclared_state_is_parse_error():
    with pytest.raises(ParseError):
        parse(HEADER + 'rule "x"\n when event type=POREQ\n then set_state(GONE)\nend\n')


@pytest.mark.parametrize("text,unit_ms", [("250ms", 250), ("3s", 3000), ("10min", 600_000),
                                          ("24h", 86_400_000), ("14d", 14 * 86_400_000)])
def test_duration_units(text, unit_ms):
    (tok, _eof) = tokenize(text)
    assert tok.kind == "duration" and tok.value == unit_ms


@pytest.mark.parametrize("src,needle", [
    (HEADER + 'rule "x"\n when event type=POREQ\n then compliant(maybe)\nend\n', "maybe"),
    (HEADER + 'rule "x"\n when event type=POREQ\n then frobnicate(1s)\nend\n', "frobnicate"),
    (HEADER + 'rule "x"\n when event type=POREQ status=sometimes\n then compliant(true)\nend\n',
     "sometimes"),
    (HEADER + 'rule "x"\n when event type=POREQ\n then add_obligation("o", {POconfirm}, seller,'
     ' buyer, 0ms)\nend\n', "0ms"),
    (HEADER + 'rule "x"\n when event type=POREQ\n then add_right(buyer, {POconfirm}, buyer)\n'
     'end\n', "buyer)"),
    (HEADER + 'rule "x"\n when event type=POREQ\n then compliant(true)\nend\n'
     'rule "x"\n when event type=POconfirm\n then compliant(true)\nend\n', '"x"\n when event '
     'type=POconfirm'),
    (HEADER + 'rule "x"\n when event type=POREQ\n then compliant(true)\n', None),
    ("contract c\nroles a, a\n", "a\n"),
    (HEADER + 'rule "x"\n when event type=POREQ\n if rights(buyer, 5)\n then compliant(true)\nend',
     "5"),
])
def test_parse_errors_point_into_offending_token(src, needle):
    with pytest.raises(ParseError) as exc:
        parse(src)
    e = exc.value
    lines = src.split("\n")
    assert 1 <= e.line <= len(lines)
    if needle is not None:
        # error lands on the last occurrence's first character
        offset = src.rindex(needle)
        line = src.count("\n", 0, offset) + 1
        col = offset - (src.rfind("\n", 0, offset) + 1) + 1
        assert (e.line, e.column) == (line, col)
    assert f"line {e.line}, column {e.column}" in str(e)


def test_bundled_contract_clean(car_rules):
    assert validate(car_rules) == []
    assert len(car_rules.rules) == 13
    assert car_rules.initial == "CREATED"
    assert set(car_rules.roles) == {"buyer", "seller", "validator"}


def test_bundled_round_trip(car_rules):
    assert parse(pretty_print(car_rules)) == car_rules


def test_empty_ruleset_prints_header_only():
    rs = RuleSet("demo", ("a", "b"), ("x",), ("S",), "S")
    text = pretty_print(rs)
    assert "rule" not in text
    assert parse(text) == rs


def test_guard_omitted_round_trip():
    rs = parse(HEADER + 'rule "x"\n when event type=POREQ\n then compliant(true)\nend\n')
    assert rs.rules[0].guard is None
    text = pretty_print(rs)
    assert "if" not in text.split("rule", 1)[1]
    assert parse(text).rules[0].guard is None


def _diag_codes(src):
    return [(d.code, d.rule) for d in validate(parse(src))]


def test_identical_rules_unreachable():
    body = ' when event type=POREQ originator=buyer\n if rights(buyer, POrequest)\n' \
           ' then compliant(true)\nend\n'
    codes = _diag_codes(HEADER + 'rule "a"\n' + body + 'rule "b"\n' + body)
    assert (UNREACHABLE_RULE, "b") in codes
    assert (UNREACHABLE_RULE, "a") not in codes


def test_wildcard_pattern_shadows_later_specific():
    src = HEADER + ('rule "any"\n when event type=POREQ\n then compliant(true)\nend\n'
                    'rule "specific"\n when event type=POREQ originator=buyer status=success\n'
                    ' then compliant(true)\nend\n')
    assert _diag_codes(src) == [(UNREACHABLE_RULE, "specific")]


def test_specific_then_wildcard_is_reachable():
    src = HEADER + ('rule "specific"\n when event type=POREQ originator=buyer\n'
                    ' then compliant(true)\nend\n'
                    'rule "any"\n when event type=POREQ\n then compliant(true)\nend\n')
    assert _diag_codes(src) == []


def test_unknown_operation():
    src = HEADER + 'rule "x"\n when event type=FOO\n then compliant(true)\nend\n'
    assert (UNKNOWN_OPERATION, "x") in _diag_codes(src)


def test_obligation_without_discharging_rule():
    src = HEADER.replace("POreject", "POreject, payClaim") + (
        'rule "x"\n when event type=POREQ\n'
        ' then add_obligation("Pay", {payClaim}, seller, buyer, 24h)\nend\n')
    diags = validate(parse(src))
    assert [d.code for d in diags] == [UNDISCHARGEABLE_OBLIGATION]
    assert "payClaim" in diags[0].message


def test_right_prohibition_conflict_possible():
    src = HEADER + ('rule "grant"\n when event type=POREQ\n'
                    ' then add_right(buyer, {POconfirm}, seller)\nend\n'
                    'rule "forbid"\n when event type=POconfirm\n'
                    ' then add_prohibition(buyer, {POconfirm})\nend\n')
    assert RIGHT_PROHIBITION_CONFLICT in [c for c, _ in _diag_codes(src)]


def test_timeout_pattern_quoted(car_rules):
    r = car_rules.rule("PO Response Overdue")
    assert r.pattern.type == timeout_type("ReactToPOReq")


def test_parse_deterministic(car_rules):
    from contractwatch.bench import bundled_source
    assert parse(bundled_source()) == parse(bundled_source()) == car_rules


# generator-driven round trip

ROLES = ("r1", "r2", "r3")
OPS = ("opA", "opB", "op_c", "op-d")
STATES = ("S0", "S1", "S2")
names = st.text(st.characters(codec="utf-8", exclude_categories=("Cs", "Cc")), min_size=1,
                max_size=8)
op_sets = st.frozensets(st.sampled_from(OPS), min_size=1, max_size=3)
role = st.sampled_from(ROLES)

atoms = st.one_of(st.builds(Rights, role, st.sampled_from(OPS)),
                  st.builds(Pending, role, names),
                  st.builds(Prohibited, role, st.sampled_from(OPS)),
                  st.builds(StateIs, st.sampled_from(STATES)))
guards = st.recursive(atoms, lambda g: st.one_of(st.builds(Not, g), st.builds(And, g, g),
                                                 st.builds(Or, g, g)), max_leaves=8)


@st.composite
def add_right(draw):
    a, b = draw(st.permutations(ROLES))[:2]
    return AddRight(a, draw(op_sets), b)


actions = st.one_of(
    st.builds(RemoveRight, role, st.sampled_from(OPS), role),
    add_right(),
    st.builds(AddObligation, names, op_sets, role, role, st.integers(1, 10**10)),
    st.builds(AddProhibition, role, op_sets),
    st.builds(SetState, st.sampled_from(STATES)),
    st.builds(SetCompliance, st.booleans()),
)
patterns = st.builds(EventPattern, st.one_of(st.sampled_from(OPS), names),
                     st.sampled_from(ROLES + ("*",)), st.sampled_from(ROLES + ("*",)),
                     st.sampled_from(("success", "failure", "*")))


@st.composite
def rulesets(draw):
    rule_names = draw(st.lists(names, unique=True, max_size=5))
    rules = tuple(Rule(n, draw(patterns), draw(st.none() | guards),
                       tuple(draw(st.lists(actions, min_size=1, max_size=4))),
                       tuple(draw(st.lists(actions, max_size=3))))
                  for n in rule_names)
    return RuleSet(draw(names), ROLES, OPS, STATES, draw(st.sampled_from(STATES)), rules)


@settings(max_examples=300, deadline=None)
@given(rulesets())
def test_round_trip_generated(rs):
    text = pretty_print(rs)
    assert parse(text) == rs
    assert pretty_print(parse(text)) == text
