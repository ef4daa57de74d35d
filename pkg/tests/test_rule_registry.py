from backend.rule_registry import ABSTRACT, CONCRETE, RuleRegistry


def test_every_rule_is_documented():
    for name, info in RuleRegistry.get_all_rules().items():
        assert info['category']
        assert info['item']
        assert info['description']
        assert set(info['engines']) <= {CONCRETE, ABSTRACT}


def test_channel_rules_are_concrete_only():
    assert set(RuleRegistry.rule_names(CONCRETE)) - set(RuleRegistry.rule_names(ABSTRACT)) == {'eval', 'wait', 'write'}
    assert 'eval' not in RuleRegistry.rule_names(ABSTRACT)


def test_only_assign_is_administrative():
    administrative = [name for name in RuleRegistry.rule_names() if RuleRegistry.is_administrative(name)]
    assert administrative == ['assign']
    assert not RuleRegistry.is_administrative('assign', ABSTRACT)
    assert not RuleRegistry.is_administrative('no-such-rule')


def test_categories():
    by_category = RuleRegistry.get_rules_by_category()
    assert set(by_category['Locks']) == {'lock', 'reenter', 'release'}
    assert 'frame_pop' in by_category['Calls']


def test_lookup_and_reference():
    assert RuleRegistry.is_known('enqueue')
    assert not RuleRegistry.is_known('grab')
    assert RuleRegistry.get_rule_documentation('grab') is None
    reference = RuleRegistry.generate_rule_reference()
    assert reference.startswith('# Transition rules')
    assert 'administrative in the concrete engine' in reference
