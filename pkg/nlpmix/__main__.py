import sys

from nlpmix.main import main

sys.exit(main())
